#include "facesr/config.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

namespace facesr {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& text) {
    double v = 0;
    const auto* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc() || ptr != end) throw ConfigError("config key '" + key + "': not a number: '" + text + "'");
    return v;
}

}  // namespace

KeyValueFile KeyValueFile::parse(const std::string& text, const std::string& origin) {
    KeyValueFile kv;
    kv.origin_ = origin;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
        if (!kv.values_.emplace(key, value).second) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
        }
    }
    return kv;
}

KeyValueFile KeyValueFile::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path.string());
}

const std::string& KeyValueFile::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError(origin_ + ": missing key '" + key + "'");
    return it->second;
}

std::string KeyValueFile::get_or(const std::string& key, const std::string& fallback) const {
    return has(key) ? get(key) : fallback;
}

double KeyValueFile::get_double(const std::string& key) const { return parse_double(key, get(key)); }

double KeyValueFile::get_double_or(const std::string& key, double fallback) const {
    return has(key) ? get_double(key) : fallback;
}

long long KeyValueFile::get_int(const std::string& key) const {
    const std::string& text = get(key);
    long long v = 0;
    const auto* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc() || ptr != end) throw ConfigError("config key '" + key + "': not an integer: '" + text + "'");
    return v;
}

long long KeyValueFile::get_int_or(const std::string& key, long long fallback) const {
    return has(key) ? get_int(key) : fallback;
}

bool KeyValueFile::get_bool_or(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const std::string& v = get(key);
    if (v == "1" || v == "true" || v == "yes") return true;
    if (v == "0" || v == "false" || v == "no") return false;
    throw ConfigError("config key '" + key + "': not a boolean: '" + v + "'");
}

std::vector<double> KeyValueFile::get_doubles(const std::string& key) const {
    std::istringstream in(get(key));
    std::vector<double> out;
    std::string tok;
    while (in >> tok) out.push_back(parse_double(key, tok));
    return out;
}

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t seed) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < size; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

std::uint64_t fnv1a64(const std::string& text, std::uint64_t seed) { return fnv1a64(text.data(), text.size(), seed); }

void TrainConfig::validate() const {
    if (scale != 4 && scale != 8) throw ConfigError("scale must be 4 or 8, got " + std::to_string(scale));
    if (hr_size != 128) throw ConfigError("hr_size must be 128");
    if (channels <= 0 || rcab_count < 0 || sft_count < 0 || sft_count > 2) throw ConfigError("bad network size");
    if (reduction <= 0 || channels % reduction != 0) throw ConfigError("reduction must divide channels");
    if (!(lr > 0)) throw ConfigError("lr must be positive");
    if (lr_period <= 0) throw ConfigError("lr_period must be positive");
    if (batch <= 0 || epochs < 0) throw ConfigError("batch must be positive and epochs non-negative");
    if (train_samples <= 0 || val_samples < 0) throw ConfigError("sample counts must be positive");
    if (!(noise_sigma >= 0)) throw ConfigError("noise_sigma must be non-negative");
    if (!(coeff_prior_weight >= 0)) throw ConfigError("coeff_prior_weight must be non-negative");
    if (no_prior && no_sam) throw ConfigError("no_prior and no_sam are mutually exclusive");
}

std::string TrainConfig::serialize() const {
    std::ostringstream s;
    s.precision(17);
    s << "scale = " << scale << "\n"
      << "hr_size = " << hr_size << "\n"
      << "channels = " << channels << "\n"
      << "rcab_count = " << rcab_count << "\n"
      << "reduction = " << reduction << "\n"
      << "sft_count = " << sft_count << "\n"
      << "lr = " << lr << "\n"
      << "lr_period = " << lr_period << "\n"
      << "batch = " << batch << "\n"
      << "epochs = " << epochs << "\n"
      << "seed = " << seed << "\n"
      << "data_dir = " << data_dir << "\n"
      << "skin_model_path = " << skin_model_path << "\n"
      << "train_samples = " << train_samples << "\n"
      << "val_samples = " << val_samples << "\n"
      << "noise_sigma = " << noise_sigma << "\n"
      << "coeff_prior_weight = " << coeff_prior_weight << "\n"
      << "no_prior = " << (no_prior ? 1 : 0) << "\n"
      << "no_sam = " << (no_sam ? 1 : 0) << "\n";
    return s.str();
}

std::uint64_t TrainConfig::hash() const { return fnv1a64(serialize()); }

TrainConfig TrainConfig::from_file(const KeyValueFile& kv) {
    static const std::set<std::string> known = {
        "scale",         "hr_size",         "channels",      "rcab_count",  "reduction", "sft_count", "lr",
        "lr_period",     "batch",           "epochs",        "seed",        "data_dir",  "skin_model_path",
        "train_samples", "val_samples",     "noise_sigma",   "no_prior",    "no_sam",
        "coeff_prior_weight"};
    for (const auto& [k, v] : kv.entries()) {
        if (!known.count(k)) throw ConfigError(kv.origin() + ": unknown key '" + k + "'");
    }
    TrainConfig c;
    c.scale = static_cast<int>(kv.get_int_or("scale", c.scale));
    c.hr_size = static_cast<int>(kv.get_int_or("hr_size", c.hr_size));
    c.channels = static_cast<int>(kv.get_int_or("channels", c.channels));
    c.rcab_count = static_cast<int>(kv.get_int_or("rcab_count", c.rcab_count));
    c.reduction = static_cast<int>(kv.get_int_or("reduction", c.reduction));
    c.sft_count = static_cast<int>(kv.get_int_or("sft_count", c.sft_count));
    c.lr = kv.get_double_or("lr", c.lr);
    c.lr_period = static_cast<int>(kv.get_int_or("lr_period", c.lr_period));
    c.batch = static_cast<int>(kv.get_int_or("batch", c.batch));
    c.epochs = static_cast<int>(kv.get_int_or("epochs", c.epochs));
    c.seed = static_cast<std::uint64_t>(kv.get_int_or("seed", static_cast<long long>(c.seed)));
    c.data_dir = kv.get_or("data_dir", c.data_dir);
    c.skin_model_path = kv.get_or("skin_model_path", c.skin_model_path);
    c.train_samples = static_cast<int>(kv.get_int_or("train_samples", c.train_samples));
    c.val_samples = static_cast<int>(kv.get_int_or("val_samples", c.val_samples));
    c.noise_sigma = kv.get_double_or("noise_sigma", c.noise_sigma);
    c.coeff_prior_weight = kv.get_double_or("coeff_prior_weight", c.coeff_prior_weight);
    c.no_prior = kv.get_bool_or("no_prior", c.no_prior);
    c.no_sam = kv.get_bool_or("no_sam", c.no_sam);
    c.validate();
    return c;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) { return from_file(KeyValueFile::load(path)); }

}  // namespace facesr
