#include "semtwin/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace semtwin {

Config::Config() {
  // environment
  declare("env.arena", "200");
  declare("env.horizon", "200");
  declare("env.obstacles", "12");
  declare("env.sectors", "8");
  declare("env.sensor_range", "50");
  // encoder
  declare("encoder.embed_dim", "16");
  declare("encoder.ctx_dim", "8");
  declare("encoder.hidden", "32");
  declare("encoder.td_hidden", "128");
  declare("encoder.beta_value", "0.5");
  declare("encoder.return_scale", "1.0");
  declare("encoder.pretrain_samples", "5000");
  declare("encoder.pretrain_steps", "2000");
  declare("encoder.pretrain_batch", "32");
  declare("encoder.pretrain_lr", "0.001");
  // channel
  declare("channel.bits", "8");
  declare("channel.per", "0.0");
  declare("channel.kmeans_samples", "20000");
  declare("channel.kmeans_iters", "10");
  // world model
  declare("worldmodel.h_dim", "128");
  declare("worldmodel.u_dim", "32");
  declare("worldmodel.hidden", "128");
  declare("worldmodel.free_bits", "1.0");
  declare("worldmodel.seq_len", "32");
  // control
  declare("control.hidden", "128");
  declare("control.gamma", "0.99");
  declare("control.lambda", "0.95");
  declare("control.entropy_weight", "0.003");
  declare("control.imagine_horizon", "10");
  declare("control.imagine_starts", "32");
  declare("control.score_function", "false");
  // valuation
  declare("valuation.rollouts", "32");
  declare("valuation.audit_rollouts", "256");
  declare("valuation.eps_rho", "1e-6");
  // selector
  declare("selector.hidden", "32");
  declare("selector.execution_mode", "distilled");
  declare("selector.pruner_fraction", "0.1");
  declare("selector.collect_rollouts", "4");
  declare("selector.distill_slots", "2");
  declare("selector.distill_rollouts", "8");
  // trainer
  declare("trainer.iterations", "2000");
  declare("trainer.steps_per_iteration", "100");
  declare("trainer.batch", "16");
  declare("trainer.budget", "96");
  declare("trainer.buffer_capacity", "50000");
  declare("trainer.lr", "0.0003");
  declare("trainer.clip_norm", "100");
  declare("trainer.price_ema", "0.9");
  declare("trainer.trace_stages", "false");
  // evaluation
  declare("eval.episodes", "50");
  declare("eval.budgets", "64,96,128,160,192");
  declare("eval.pers", "0.0");
  declare("eval.strategies", "civ,random,fixed-topk");
  declare("eval.dump_traces", "false");
}

void Config::declare(const std::string& key, const std::string& default_value) {
  values_[key] = default_value;
}

void Config::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  SEMTWIN_CHECK(it != values_.end(), "unknown config key: " + key);
  it->second = value;
}

namespace {
std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}
}  // namespace

void Config::set_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  SEMTWIN_CHECK(eq != std::string::npos, "override must be key=value: " + assignment);
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void Config::load_file(const std::string& path) {
  std::ifstream f(path);
  SEMTWIN_CHECK(f.good(), "cannot open config file: " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    try {
      set_override(line);
    } catch (const ContractViolation& e) {
      throw ContractViolation(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

bool Config::has(const std::string& key) const { return values_.count(key) > 0; }

const std::string& Config::raw(const std::string& key) const {
  auto it = values_.find(key);
  SEMTWIN_CHECK(it != values_.end(), "unknown config key: " + key);
  return it->second;
}

int Config::geti(const std::string& key) const {
  try {
    return std::stoi(raw(key));
  } catch (const std::exception&) {
    throw ContractViolation("config key " + key + " is not an integer: " + raw(key));
  }
}

double Config::getd(const std::string& key) const {
  try {
    return std::stod(raw(key));
  } catch (const std::exception&) {
    throw ContractViolation("config key " + key + " is not a number: " + raw(key));
  }
}

bool Config::getb(const std::string& key) const {
  const auto& v = raw(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ContractViolation("config key " + key + " is not a boolean: " + v);
}

std::string Config::gets(const std::string& key) const { return raw(key); }

std::vector<std::string> Config::get_strings(const std::string& key) const {
  std::vector<std::string> out;
  std::stringstream ss(raw(key));
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<int> Config::get_ints(const std::string& key) const {
  std::vector<int> out;
  for (const auto& s : get_strings(key)) {
    try {
      out.push_back(std::stoi(s));
    } catch (const std::exception&) {
      throw ContractViolation("config key " + key + " has a non-integer item: " + s);
    }
  }
  return out;
}

std::vector<double> Config::get_doubles(const std::string& key) const {
  std::vector<double> out;
  for (const auto& s : get_strings(key)) {
    try {
      out.push_back(std::stod(s));
    } catch (const std::exception&) {
      throw ContractViolation("config key " + key + " has a non-numeric item: " + s);
    }
  }
  return out;
}

void Config::echo(std::ostream& os) const {
  for (const auto& [k, v] : values_) os << k << " = " << v << '\n';
}

}  // namespace semtwin
