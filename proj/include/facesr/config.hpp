#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace facesr {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Flat `key = value` text with `#` comments. Later duplicates are an error.
class KeyValueFile {
public:
    static KeyValueFile parse(const std::string& text, const std::string& origin = "<string>");
    static KeyValueFile load(const std::filesystem::path& path);

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    const std::string& get(const std::string& key) const;
    std::string get_or(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key) const;
    double get_double_or(const std::string& key, double fallback) const;
    long long get_int(const std::string& key) const;
    long long get_int_or(const std::string& key, long long fallback) const;
    bool get_bool_or(const std::string& key, bool fallback) const;
    std::vector<double> get_doubles(const std::string& key) const;

    const std::map<std::string, std::string>& entries() const { return values_; }
    const std::string& origin() const { return origin_; }

private:
    std::map<std::string, std::string> values_;
    std::string origin_;
};

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t seed = 1469598103934665603ULL);
std::uint64_t fnv1a64(const std::string& text, std::uint64_t seed = 1469598103934665603ULL);

// Settings shared by the training and inference commands.
struct TrainConfig {
    int scale = 8;
    int hr_size = 128;
    int channels = 64;
    int rcab_count = 8;
    int reduction = 16;
    int sft_count = 2;
    double lr = 2e-4;
    int lr_period = 50;
    int batch = 8;
    int epochs = 60;
    std::uint64_t seed = 1;
    std::string data_dir;
    std::string skin_model_path;
    int train_samples = 64;
    int val_samples = 16;
    double noise_sigma = 0.02;
    double coeff_prior_weight = 0.01;
    bool no_prior = false;
    bool no_sam = false;

    int lr_size() const { return hr_size / scale; }
    void validate() const;
    std::string serialize() const;
    std::uint64_t hash() const;

    static TrainConfig from_file(const KeyValueFile& kv);
    static TrainConfig load(const std::filesystem::path& path);
};

}  // namespace facesr
