#include "semtwin/channel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>

namespace semtwin {

std::vector<double> Codebook::centroid_vec(int code) const {
  SEMTWIN_CHECK(code >= 0 && code < size(), "code out of codebook range");
  return std::vector<double>(centroid(code), centroid(code) + dim_);
}

int Codebook::quantize(const std::vector<double>& embedding) const {
  SEMTWIN_CHECK(static_cast<int>(embedding.size()) == dim_,
                "embedding dim does not match codebook");
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int c = 0; c < size(); ++c) {
    const double* cent = centroid(c);
    double d = 0.0;
    for (int j = 0; j < dim_; ++j) {
      const double diff = embedding[j] - cent[j];
      d += diff * diff;
    }
    if (d < best_d) {  // strict: ties keep the lowest index
      best_d = d;
      best = c;
    }
  }
  return best;
}

Codebook Codebook::fit_kmeans(const std::vector<std::vector<double>>& samples, int bits,
                              int iterations, uint64_t seed) {
  SEMTWIN_CHECK(!samples.empty(), "k-means needs samples");
  const int dim = static_cast<int>(samples[0].size());
  Codebook cb(bits, dim);
  const int k = cb.size();
  Rng rng(mix_seed(seed, 0xC0DE));

  for (int c = 0; c < k; ++c) {
    const auto& s = samples[rng.uniform_int(static_cast<int>(samples.size()))];
    std::copy(s.begin(), s.end(), cb.centroids_.begin() + static_cast<size_t>(c) * dim);
  }

  std::vector<int> assign(samples.size(), 0);
  for (int it = 0; it < iterations; ++it) {
    for (size_t i = 0; i < samples.size(); ++i) assign[i] = cb.quantize(samples[i]);
    std::vector<double> sums(static_cast<size_t>(k) * dim, 0.0);
    std::vector<int> counts(k, 0);
    for (size_t i = 0; i < samples.size(); ++i) {
      const int c = assign[i];
      ++counts[c];
      for (int j = 0; j < dim; ++j) sums[static_cast<size_t>(c) * dim + j] += samples[i][j];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[c] == 0) {
        const auto& s = samples[rng.uniform_int(static_cast<int>(samples.size()))];
        std::copy(s.begin(), s.end(), cb.centroids_.begin() + static_cast<size_t>(c) * dim);
      } else {
        for (int j = 0; j < dim; ++j)
          cb.centroids_[static_cast<size_t>(c) * dim + j] = sums[static_cast<size_t>(c) * dim + j] / counts[c];
      }
    }
  }
  return cb;
}

void Codebook::save(const std::string& path) const {
  std::ofstream f(path);
  SEMTWIN_CHECK(f.good(), "cannot open codebook file for writing: " + path);
  f << "semtwin-codebook 1 " << bits_ << ' ' << dim_ << '\n';
  char buf[32];
  for (size_t i = 0; i < centroids_.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g", centroids_[i]);
    f << buf << (i + 1 == centroids_.size() ? '\n' : ' ');
  }
  SEMTWIN_CHECK(f.good(), "codebook write failed: " + path);
}

Codebook Codebook::load(const std::string& path) {
  std::ifstream f(path);
  SEMTWIN_CHECK(f.good(), "cannot open codebook: " + path);
  std::string magic;
  int version = 0, bits = 0, dim = 0;
  f >> magic >> version >> bits >> dim;
  SEMTWIN_CHECK(magic == "semtwin-codebook" && version == 1, "bad codebook header: " + path);
  Codebook cb(bits, dim);
  for (double& x : cb.centroids_) f >> x;
  SEMTWIN_CHECK(!f.fail(), "truncated codebook: " + path);
  return cb;
}

SemanticMessage assemble_message(const std::vector<SemanticToken>& tokens,
                                 const std::vector<int>& subset, int budget_bits) {
  std::set<int> seen;
  for (int idx : subset)
    SEMTWIN_CHECK(seen.insert(idx).second, "duplicate token index in message");

  SemanticMessage msg;
  msg.indices.assign(subset.begin(), subset.end());
  std::sort(msg.indices.begin(), msg.indices.end());
  for (int idx : msg.indices) {
    SEMTWIN_CHECK(idx >= 0 && idx < static_cast<int>(tokens.size()), "token index out of range");
    SEMTWIN_CHECK(tokens[idx].code >= 0, "token not quantized");
    msg.codes.push_back(tokens[idx].code);
    msg.total_bits += tokens[idx].bits;
  }
  SEMTWIN_CHECK(msg.total_bits <= budget_bits, "message exceeds the slot bit budget");
  return msg;
}

ReceivedTokens ErasureChannel::transmit(const SemanticMessage& msg, const Codebook& cb) {
  ReceivedTokens rx;
  rx.indices = msg.indices;
  rx.erased.resize(msg.indices.size(), 0);
  rx.embeddings.resize(msg.indices.size());
  for (size_t i = 0; i < msg.indices.size(); ++i) {
    ++sent_;
    const bool lost = rng_.bernoulli(cfg_.packet_error_rate);
    if (lost) {
      rx.erased[i] = 1;
      ++erased_total_;
    } else {
      rx.embeddings[i] = cb.centroid_vec(msg.codes[i]);
      ++rx.delivered;
    }
  }
  return rx;
}

}  // namespace semtwin
