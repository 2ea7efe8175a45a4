#pragma once

// Token quantization codec and the lossy uplink abstraction: a codebook-based
// vector quantizer (8-bit codes by default) and an i.i.d. per-token packet
// erasure channel standing in for the fading/noise physical layer.

#include <cstdint>
#include <string>
#include <vector>

#include "semtwin/common.hpp"
#include "semtwin/rng.hpp"

namespace semtwin {

struct SemanticToken {
  int index = 0;              // position within the candidate set, 0-based
  std::vector<double> embedding;
  int code = -1;              // codeword id once quantized
  int bits = 8;
};

class Codebook {
 public:
  Codebook() = default;
  Codebook(int bits, int dim) : bits_(bits), dim_(dim) {
    centroids_.assign(static_cast<size_t>(size()) * dim, 0.0);
  }

  int bits() const { return bits_; }
  int dim() const { return dim_; }
  int size() const { return 1 << bits_; }

  const double* centroid(int code) const { return &centroids_[static_cast<size_t>(code) * dim_]; }
  std::vector<double> centroid_vec(int code) const;
  std::vector<double>& raw() { return centroids_; }
  const std::vector<double>& raw() const { return centroids_; }

  // Nearest centroid under Euclidean distance; ties break to the lowest index.
  int quantize(const std::vector<double>& embedding) const;

  // Lloyd's iterations seeded from the sample set; empty clusters are
  // reseeded from the data. Deterministic given the seed.
  static Codebook fit_kmeans(const std::vector<std::vector<double>>& samples, int bits,
                             int iterations, uint64_t seed);

  void save(const std::string& path) const;
  static Codebook load(const std::string& path);

 private:
  int bits_ = 8;
  int dim_ = 0;
  std::vector<double> centroids_;
};

struct SemanticMessage {
  std::vector<int> indices;  // distinct token indices, ascending
  std::vector<int> codes;
  int total_bits = 0;
};

// Validates distinctness and the per-slot budget; bits = 8 * |subset|.
SemanticMessage assemble_message(const std::vector<SemanticToken>& tokens,
                                 const std::vector<int>& subset, int budget_bits);

struct ChannelConfig {
  double packet_error_rate = 0.0;
  uint64_t seed = 0;
};

struct ReceivedTokens {
  std::vector<int> indices;               // as transmitted
  std::vector<uint8_t> erased;            // per transmitted token
  std::vector<std::vector<double>> embeddings;  // centroid embeddings; empty when erased
  int delivered = 0;
};

class ErasureChannel {
 public:
  explicit ErasureChannel(ChannelConfig cfg) : cfg_(cfg), rng_(cfg.seed) {
    SEMTWIN_CHECK(cfg.packet_error_rate >= 0.0 && cfg.packet_error_rate <= 1.0,
                  "packet error rate must be in [0,1]");
  }

  ReceivedTokens transmit(const SemanticMessage& msg, const Codebook& cb);

  long sent_count() const { return sent_; }
  long erased_count() const { return erased_total_; }

 private:
  ChannelConfig cfg_;
  Rng rng_;
  long sent_ = 0;
  long erased_total_ = 0;
};

}  // namespace semtwin
