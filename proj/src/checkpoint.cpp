#include "facesr/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "facesr/config.hpp"

namespace facesr {

static_assert(std::endian::native == std::endian::little, "checkpoint blobs assume a little-endian host");

namespace {

const char* dtype_name(DType d) { return d == DType::f32 ? "f32" : "i32"; }

void check_token(const std::string& s, const char* what) {
    if (s.empty() || s.find_first_of(" \t\r\n") != std::string::npos) {
        throw std::invalid_argument(std::string("checkpoint: ") + what + " must be a non-empty token: '" + s + "'");
    }
}

}  // namespace

const ArchiveTensor* Checkpoint::find(const std::string& name) const {
    for (const auto& t : tensors)
        if (t.name == name) return &t;
    return nullptr;
}

void Checkpoint::add(std::string name, Shape shape, std::span<const float> values) {
    check_token(name, "tensor name");
    if (find(name)) throw std::invalid_argument("checkpoint: duplicate tensor " + name);
    if (shape_numel(shape) != values.size()) throw DimensionError("checkpoint: value count mismatch for " + name);
    ArchiveTensor t;
    t.name = std::move(name);
    t.dtype = DType::f32;
    t.shape = std::move(shape);
    t.f32.assign(values.begin(), values.end());
    tensors.push_back(std::move(t));
}

void Checkpoint::add(std::string name, Shape shape, std::span<const std::int32_t> values) {
    check_token(name, "tensor name");
    if (find(name)) throw std::invalid_argument("checkpoint: duplicate tensor " + name);
    if (shape_numel(shape) != values.size()) throw DimensionError("checkpoint: value count mismatch for " + name);
    ArchiveTensor t;
    t.name = std::move(name);
    t.dtype = DType::i32;
    t.shape = std::move(shape);
    t.i32.assign(values.begin(), values.end());
    tensors.push_back(std::move(t));
}

const std::string& Checkpoint::meta_value(const std::string& key) const {
    auto it = meta.find(key);
    if (it == meta.end()) throw CorruptManifestError("checkpoint: missing meta '" + key + "'");
    return it->second;
}

bool Checkpoint::same_contents(const Checkpoint& other) const {
    if (meta != other.meta || tensors.size() != other.tensors.size()) return false;
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        const auto& a = tensors[i];
        const auto& b = other.tensors[i];
        if (a.name != b.name || a.dtype != b.dtype || a.shape != b.shape) return false;
        if (a.f32.size() != b.f32.size() || a.i32 != b.i32) return false;
        if (!a.f32.empty() && std::memcmp(a.f32.data(), b.f32.data(), a.f32.size() * sizeof(float)) != 0) return false;
    }
    return true;
}

std::filesystem::path blob_path(const std::filesystem::path& manifest) {
    auto p = manifest;
    p += ".blob";
    return p;
}

namespace {

std::string render_manifest(const Checkpoint& ckpt, std::size_t& blob_bytes) {
    std::ostringstream m;
    m << Checkpoint::kMagic << " " << Checkpoint::kVersion << "\n";
    for (const auto& [k, v] : ckpt.meta) {
        check_token(k, "meta key");
        if (v.find('\n') != std::string::npos) throw std::invalid_argument("checkpoint: meta value contains newline");
        m << "meta " << k << " " << v << "\n";
    }
    std::size_t offset = 0;
    for (const auto& t : ckpt.tensors) {
        const std::size_t bytes = t.numel() * 4;
        m << "tensor " << t.name << " " << dtype_name(t.dtype) << " " << t.shape.size();
        for (auto d : t.shape) m << " " << d;
        m << " " << offset << " " << bytes << "\n";
        offset += bytes;
    }
    m << "blob_bytes " << offset << "\n";
    m << "end\n";
    blob_bytes = offset;
    return m.str();
}

std::vector<char> render_blob(const Checkpoint& ckpt, std::size_t blob_bytes) {
    std::vector<char> blob(blob_bytes);
    std::size_t offset = 0;
    for (const auto& t : ckpt.tensors) {
        const std::size_t bytes = t.numel() * 4;
        const void* src = t.dtype == DType::f32 ? static_cast<const void*>(t.f32.data()) : t.i32.data();
        if (bytes) std::memcpy(blob.data() + offset, src, bytes);
        offset += bytes;
    }
    return blob;
}

void write_file_atomic(const std::filesystem::path& path, const char* data, std::size_t size) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw CheckpointError("cannot write " + tmp.string());
        out.write(data, static_cast<std::streamsize>(size));
        if (!out) throw CheckpointError("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

struct ManifestEntry {
    std::string name;
    DType dtype;
    Shape shape;
    std::size_t offset;
    std::size_t bytes;
};

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    for (const auto& t : ckpt.tensors) {
        const std::size_t have = t.dtype == DType::f32 ? t.f32.size() : t.i32.size();
        if (have != t.numel()) throw DimensionError("checkpoint: value count mismatch for " + t.name);
    }
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::size_t blob_bytes = 0;
    const std::string manifest = render_manifest(ckpt, blob_bytes);
    const auto blob = render_blob(ckpt, blob_bytes);
    // Blob first: a manifest on disk always describes a complete blob.
    write_file_atomic(blob_path(path), blob.data(), blob.size());
    write_file_atomic(path, manifest.data(), manifest.size());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    const std::string where = path.string();
    auto corrupt = [&](int line, const std::string& msg) {
        return CorruptManifestError(where + ":" + std::to_string(line) + ": " + msg);
    };

    Checkpoint ckpt;
    std::vector<ManifestEntry> entries;
    std::string line;
    int lineno = 0;
    bool have_blob_bytes = false, have_end = false;
    std::size_t blob_bytes = 0;

    if (!std::getline(in, line)) throw corrupt(1, "empty manifest");
    ++lineno;
    {
        std::istringstream h(line);
        std::string magic;
        int version = 0;
        if (!(h >> magic >> version) || magic != Checkpoint::kMagic) throw corrupt(lineno, "bad magic");
        if (version != Checkpoint::kVersion) throw corrupt(lineno, "unsupported version " + std::to_string(version));
    }
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        if (have_end) throw corrupt(lineno, "content after end");
        std::istringstream s(line);
        std::string kind;
        s >> kind;
        if (kind == "meta") {
            std::string key, value;
            if (!(s >> key)) throw corrupt(lineno, "meta without key");
            std::getline(s, value);
            if (!value.empty() && value.front() == ' ') value.erase(0, 1);
            if (!ckpt.meta.emplace(key, value).second) throw corrupt(lineno, "duplicate meta " + key);
        } else if (kind == "tensor") {
            ManifestEntry e;
            std::string dtype;
            std::size_t rank = 0;
            if (!(s >> e.name >> dtype >> rank)) throw corrupt(lineno, "malformed tensor line");
            if (dtype == "f32") {
                e.dtype = DType::f32;
            } else if (dtype == "i32") {
                e.dtype = DType::i32;
            } else {
                throw corrupt(lineno, "unknown dtype " + dtype);
            }
            if (rank > 8) throw corrupt(lineno, "rank too large");
            e.shape.resize(rank);
            for (auto& d : e.shape)
                if (!(s >> d)) throw corrupt(lineno, "malformed shape for " + e.name);
            if (!(s >> e.offset >> e.bytes)) throw corrupt(lineno, "missing offset/bytes for " + e.name);
            std::string extra;
            if (s >> extra) throw corrupt(lineno, "trailing tokens");
            if (e.bytes != shape_numel(e.shape) * 4) throw corrupt(lineno, "byte length disagrees with shape for " + e.name);
            for (const auto& prev : entries)
                if (prev.name == e.name) throw corrupt(lineno, "duplicate tensor " + e.name);
            entries.push_back(std::move(e));
        } else if (kind == "blob_bytes") {
            if (!(s >> blob_bytes)) throw corrupt(lineno, "malformed blob_bytes");
            have_blob_bytes = true;
        } else if (kind == "end") {
            have_end = true;
        } else {
            throw corrupt(lineno, "unknown record '" + kind + "'");
        }
    }
    if (!have_blob_bytes) throw corrupt(lineno, "missing blob_bytes");
    if (!have_end) throw corrupt(lineno, "missing end marker");

    std::vector<std::pair<std::size_t, std::size_t>> ranges;
    for (const auto& e : entries) {
        if (e.offset > blob_bytes || e.bytes > blob_bytes - e.offset) {
            throw CorruptManifestError(where + ": tensor " + e.name + " lies outside the blob");
        }
        ranges.emplace_back(e.offset, e.offset + e.bytes);
    }
    std::sort(ranges.begin(), ranges.end());
    for (std::size_t i = 1; i < ranges.size(); ++i)
        if (ranges[i].first < ranges[i - 1].second) throw CorruptManifestError(where + ": overlapping tensor ranges");

    const auto bpath = blob_path(path);
    std::error_code ec;
    const auto actual = std::filesystem::file_size(bpath, ec);
    if (ec) throw TruncatedBlobError("missing blob " + bpath.string());
    if (actual < blob_bytes) {
        throw TruncatedBlobError(bpath.string() + ": " + std::to_string(actual) + " bytes, manifest declares " +
                                 std::to_string(blob_bytes));
    }
    if (actual > blob_bytes) throw CorruptManifestError(bpath.string() + ": blob larger than the manifest declares");
    std::ifstream bin(bpath, std::ios::binary);
    std::vector<char> blob(blob_bytes);
    if (blob_bytes && !bin.read(blob.data(), static_cast<std::streamsize>(blob_bytes))) {
        throw TruncatedBlobError("short read from " + bpath.string());
    }
    for (const auto& e : entries) {
        ArchiveTensor t;
        t.name = e.name;
        t.dtype = e.dtype;
        t.shape = e.shape;
        if (e.dtype == DType::f32) {
            t.f32.resize(t.numel());
            if (e.bytes) std::memcpy(t.f32.data(), blob.data() + e.offset, e.bytes);
        } else {
            t.i32.resize(t.numel());
            if (e.bytes) std::memcpy(t.i32.data(), blob.data() + e.offset, e.bytes);
        }
        ckpt.tensors.push_back(std::move(t));
    }
    return ckpt;
}

void store_parameters(Checkpoint& ckpt, const ParameterSet<float>& params) {
    for (const auto& e : params.entries()) ckpt.add(e.name, e.tensor.shape(), e.tensor.data());
}

void restore_parameters(const Checkpoint& ckpt, ParameterSet<float>& params) {
    for (auto& e : params.entries()) {
        const ArchiveTensor* t = ckpt.find(e.name);
        if (!t) throw ShapeMismatchError("checkpoint has no tensor " + e.name);
        if (t->dtype != DType::f32 || t->shape != e.tensor.shape()) {
            throw ShapeMismatchError("tensor " + e.name + ": checkpoint shape " + shape_str(t->shape) +
                                     ", model expects " + shape_str(e.tensor.shape()));
        }
        std::copy(t->f32.begin(), t->f32.end(), e.tensor.data().begin());
    }
}

void store_optimizer(Checkpoint& ckpt, const ParameterSet<float>& params, const Adam& adam) {
    const auto& st = adam.state();
    const auto& entries = params.entries();
    if (st.first_moment.size() != entries.size()) throw std::logic_error("store_optimizer: optimizer not attached");
    for (std::size_t i = 0; i < entries.size(); ++i) {
        ckpt.add("adam.m." + entries[i].name, entries[i].tensor.shape(), st.first_moment[i]);
        ckpt.add("adam.v." + entries[i].name, entries[i].tensor.shape(), st.second_moment[i]);
    }
    ckpt.meta["adam_step"] = std::to_string(st.step);
}

void restore_optimizer(const Checkpoint& ckpt, const ParameterSet<float>& params, Adam& adam) {
    adam.attach(params);
    auto& st = adam.state();
    const auto& entries = params.entries();
    for (std::size_t i = 0; i < entries.size(); ++i) {
        for (int k = 0; k < 2; ++k) {
            const std::string name = (k == 0 ? "adam.m." : "adam.v.") + entries[i].name;
            const ArchiveTensor* t = ckpt.find(name);
            if (!t) throw ShapeMismatchError("checkpoint has no tensor " + name);
            if (t->shape != entries[i].tensor.shape()) throw ShapeMismatchError("tensor " + name + ": shape mismatch");
            (k == 0 ? st.first_moment[i] : st.second_moment[i]) = t->f32;
        }
    }
    st.step = std::stoll(ckpt.meta_value("adam_step"));
}

Checkpoint basis_to_checkpoint(const FaceBasis& basis) {
    basis.validate();
    Checkpoint c;
    const std::size_t v3 = 3 * basis.vertex_count;
    c.meta["kind"] = "basis";
    c.meta["vertex_count"] = std::to_string(basis.vertex_count);
    c.add("mean_shape", {v3}, basis.mean_shape);
    c.add("mean_texture", {v3}, basis.mean_texture);
    c.add("identity_basis", {v3, kIdentityDim}, basis.identity_basis);
    c.add("expression_basis", {v3, kExpressionDim}, basis.expression_basis);
    c.add("texture_basis", {v3, kTextureDim}, basis.texture_basis);
    std::vector<std::int32_t> tri;
    tri.reserve(3 * basis.triangles.size());
    for (const auto& t : basis.triangles)
        for (auto i : t) tri.push_back(static_cast<std::int32_t>(i));
    c.add("triangles", {basis.triangles.size(), 3}, std::span<const std::int32_t>(tri));
    return c;
}

FaceBasis basis_from_checkpoint(const Checkpoint& ckpt) {
    auto get = [&](const char* name) -> const ArchiveTensor& {
        const ArchiveTensor* t = ckpt.find(name);
        if (!t) throw ShapeMismatchError(std::string("basis archive has no tensor ") + name);
        return *t;
    };
    FaceBasis b;
    b.vertex_count = get("mean_shape").numel() / 3;
    b.mean_shape = get("mean_shape").f32;
    b.mean_texture = get("mean_texture").f32;
    b.identity_basis = get("identity_basis").f32;
    b.expression_basis = get("expression_basis").f32;
    b.texture_basis = get("texture_basis").f32;
    const auto& tri = get("triangles");
    if (tri.dtype != DType::i32 || tri.shape.size() != 2 || tri.shape[1] != 3) {
        throw ShapeMismatchError("basis archive: triangles must be i32 [T, 3]");
    }
    for (std::size_t i = 0; i < tri.shape[0]; ++i) {
        Triangle t{};
        for (int k = 0; k < 3; ++k) {
            if (tri.i32[3 * i + k] < 0) throw ShapeMismatchError("basis archive: negative vertex index");
            t[k] = static_cast<std::uint32_t>(tri.i32[3 * i + k]);
        }
        b.triangles.push_back(t);
    }
    b.validate();
    return b;
}

std::string checkpoint_digest(const Checkpoint& ckpt) {
    std::size_t blob_bytes = 0;
    const std::string manifest = render_manifest(ckpt, blob_bytes);
    const auto blob = render_blob(ckpt, blob_bytes);
    std::uint64_t h = fnv1a64(manifest);
    h = fnv1a64(blob.data(), blob.size(), h);
    std::ostringstream s;
    s << std::hex << h;
    return s.str();
}

}  // namespace facesr
