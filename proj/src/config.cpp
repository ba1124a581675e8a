#include "partswap/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "partswap/common.hpp"

namespace partswap {
namespace {

struct KeyDef {
  const char* key;
  const char* def;
  const char* doc;
};

const KeyDef kKeys[] = {
    {"threads", "0", "worker threads, 0 = all available cores"},
    {"codec.factor", "4", "space-to-depth factor; 64x64 RGB -> 16x16x48 latents"},
    {"encoder.patch", "4", "patch size of the encoder stem conv (kernel = stride)"},
    {"encoder.dim", "64", "encoder feature width d"},
    {"encoder.blocks", "4", "encoder residual blocks; features are taken before the last"},
    {"encoder.hierarchical", "false", "concatenate intermediate block outputs channel-wise"},
    {"encoder.taps", "2,4", "1-indexed blocks whose outputs form the hierarchical stack"},
    {"fusion.hidden_mult", "2", "fusion MLP hidden width as a multiple of its input width"},
    {"unet.base", "32", "base channel count of the denoiser"},
    {"unet.mults", "1,2,4", "per-level channel multipliers, shallow to deep"},
    {"unet.attn_levels", "2", "levels with self-attention blocks; 0 = full resolution"},
    {"unet.groups", "8", "group count for group norm"},
    {"unet.time_dim", "128", "sinusoidal timestep embedding width"},
    {"inject.mode", "add_in_ca",
     "add_in_ca | add_in_conv | cross_attn | multi_cross_attn | cross_attn_add_in_ca | "
     "cross_attn_add_in_conv | hierarchy_add_in_ca"},
    {"inject.lambda", "1.0", "condition injection strength"},
    {"inject.inter", "bilinear", "resize used to match C to a site: bilinear | nearest"},
    {"diffusion.T", "1000", "training timestep count"},
    {"diffusion.beta_start", "1e-4", "first beta of the linear schedule"},
    {"diffusion.beta_end", "2e-2", "last beta of the linear schedule"},
    {"ddim.steps", "50", "sampling steps"},
    {"ddim.seed", "0", "base seed for sampling noise draws"},
    {"fix.threshold", "0",
     "sampler steps that pin the skin region to the inverted target latents, 0..ddim.steps"},
    {"train.lr", "1e-4", "AdamW learning rate"},
    {"train.weight_decay", "0.01", "AdamW decoupled weight decay"},
    {"train.beta1", "0.9", "AdamW first-moment decay"},
    {"train.beta2", "0.999", "AdamW second-moment decay"},
    {"train.batch", "8", "training batch size"},
    {"train.steps", "1500", "optimizer steps to run"},
    {"train.seed", "0", "seed for init, timestep and noise draws, and view pairing"},
    {"train.log_every", "20", "steps between loss log lines"},
    {"train.ckpt_every", "500", "steps between checkpoint writes"},
    {"data.seed", "0", "corpus generation seed"},
    {"data.identities", "512", "generated identity count"},
    {"data.views", "8", "perturbed views rendered per identity"},
    {"data.size", "64", "rendered image edge length"},
    {"data.holdout", "32", "identities reserved for evaluation, taken from the end"},
    {"eval.triples", "100", "held-out (target, source, part) triples to score"},
    {"eval.seed", "0", "seed for drawing evaluation triples"},
    {"ablate.identities", "48", "identity count for the ablation corpus"},
    {"ablate.views", "4", "views per identity for the ablation corpus"},
    {"ablate.size", "32", "image edge length for the ablation corpus"},
    {"ablate.holdout", "8", "identities reserved for evaluation in each ablation arm"},
    {"ablate.steps", "220", "training steps per ablation arm"},
    {"ablate.triples", "24", "eval triples per ablation arm"},
};

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

RunConfig::RunConfig() {
  for (const KeyDef& k : kKeys) values_[k.key] = k.def;
}

bool RunConfig::has(const std::string& key) const { return values_.count(key) != 0; }

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second = value;
}

void RunConfig::load_string(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + " has no '=': " + line);
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + " has an empty key");
    set(key, value);
  }
}

void RunConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config file " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  load_string(buf.str());
}

const std::string& RunConfig::gets(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

int64_t RunConfig::geti(const std::string& key) const {
  const std::string& v = gets(key);
  char* end = nullptr;
  long long r = std::strtoll(v.c_str(), &end, 10);
  if (end == v.c_str() || *end != '\0') {
    throw ConfigError("config key '" + key + "' expects an integer, got '" + v + "'");
  }
  return r;
}

double RunConfig::getd(const std::string& key) const {
  const std::string& v = gets(key);
  char* end = nullptr;
  double r = std::strtod(v.c_str(), &end);
  if (end == v.c_str() || *end != '\0') {
    throw ConfigError("config key '" + key + "' expects a number, got '" + v + "'");
  }
  return r;
}

bool RunConfig::getb(const std::string& key) const {
  const std::string& v = gets(key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key '" + key + "' expects true/false, got '" + v + "'");
}

std::vector<int> RunConfig::get_int_list(const std::string& key) const {
  const std::string& v = gets(key);
  std::vector<int> out;
  std::string item;
  std::istringstream in(v);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (item.empty()) throw ConfigError("config key '" + key + "' has an empty list element");
    char* end = nullptr;
    long r = std::strtol(item.c_str(), &end, 10);
    if (end == item.c_str() || *end != '\0') {
      throw ConfigError("config key '" + key + "' expects integers, got '" + item + "'");
    }
    out.push_back(static_cast<int>(r));
  }
  if (out.empty()) throw ConfigError("config key '" + key + "' expects a non-empty list");
  return out;
}

std::string RunConfig::dump() const {
  std::ostringstream out;
  for (const KeyDef& k : kKeys) {
    out << "# " << k.doc << "\n";
    out << k.key << " = " << values_.at(k.key) << "\n";
  }
  return out.str();
}

}  // namespace partswap
