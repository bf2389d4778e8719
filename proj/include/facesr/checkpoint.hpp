#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "facesr/morphable.hpp"
#include "facesr/optim.hpp"
#include "facesr/tensor.hpp"

namespace facesr {

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
class CorruptManifestError : public CheckpointError {
public:
    using CheckpointError::CheckpointError;
};
class ShapeMismatchError : public CheckpointError {
public:
    using CheckpointError::CheckpointError;
};
class TruncatedBlobError : public CheckpointError {
public:
    using CheckpointError::CheckpointError;
};

enum class DType { f32, i32 };

struct ArchiveTensor {
    std::string name;
    DType dtype = DType::f32;
    Shape shape;
    std::vector<float> f32;
    std::vector<std::int32_t> i32;

    std::size_t numel() const { return shape_numel(shape); }
};

// Named-tensor archive: a text manifest at `path` and a little-endian blob
// at `path` + ".blob".
//
//   FACESR-CKPT 1
//   meta <key> <value>
//   tensor <name> <f32|i32> <rank> <dims...> <offset> <bytes>
//   blob_bytes <n>
//   end
struct Checkpoint {
    static constexpr const char* kMagic = "FACESR-CKPT";
    static constexpr int kVersion = 1;

    std::map<std::string, std::string> meta;
    std::vector<ArchiveTensor> tensors;

    const ArchiveTensor* find(const std::string& name) const;
    void add(std::string name, Shape shape, std::span<const float> values);
    void add(std::string name, Shape shape, std::span<const std::int32_t> values);

    const std::string& meta_value(const std::string& key) const;
    bool same_contents(const Checkpoint& other) const;  // bitwise
};

std::filesystem::path blob_path(const std::filesystem::path& manifest);

// Writes both files through temporaries and renames them into place.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
// Parses and validates the manifest before touching the blob.
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Parameters stored under their own names.
void store_parameters(Checkpoint& ckpt, const ParameterSet<float>& params);
// Copies every parameter from the archive; missing tensors or shape
// differences raise ShapeMismatchError naming the tensor.
void restore_parameters(const Checkpoint& ckpt, ParameterSet<float>& params);

// Adam moments as "adam.m.<param>" / "adam.v.<param>" plus meta adam_step.
void store_optimizer(Checkpoint& ckpt, const ParameterSet<float>& params, const Adam& adam);
void restore_optimizer(const Checkpoint& ckpt, const ParameterSet<float>& params, Adam& adam);

Checkpoint basis_to_checkpoint(const FaceBasis& basis);
FaceBasis basis_from_checkpoint(const Checkpoint& ckpt);

// FNV-1a over manifest and blob contents, hex encoded.
std::string checkpoint_digest(const Checkpoint& ckpt);

}  // namespace facesr
