#include "iism/store.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include <fmt/format.h>
#include <openssl/evp.h>

#include "iism/image_io.hpp"

namespace iism {

using nlohmann::json;

const TensorBlob& Checkpoint::tensor(const std::string& name) const {
    for (const auto& t : tensors)
        if (t.name == name) return t;
    throw_error(ErrorKind::missing_tensor, fmt::format("checkpoint has no tensor '{}'", name));
}

bool Checkpoint::has_tensor(const std::string& name) const {
    return std::any_of(tensors.begin(), tensors.end(),
                       [&](const TensorBlob& t) { return t.name == name; });
}

namespace {

class Sha256 {
  public:
    Sha256() : ctx_(EVP_MD_CTX_new()) {
        if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1)
            throw_error(ErrorKind::numerics, "SHA-256 init failed");
    }
    ~Sha256() { EVP_MD_CTX_free(ctx_); }
    Sha256(const Sha256&) = delete;
    Sha256& operator=(const Sha256&) = delete;

    void update(const void* data, std::size_t size) {
        if (EVP_DigestUpdate(ctx_, data, size) != 1)
            throw_error(ErrorKind::numerics, "SHA-256 update failed");
    }

    std::string hex() {
        unsigned char out[EVP_MAX_MD_SIZE];
        unsigned int len = 0;
        if (EVP_DigestFinal_ex(ctx_, out, &len) != 1)
            throw_error(ErrorKind::numerics, "SHA-256 final failed");
        std::string hex;
        hex.reserve(2 * len);
        static const char* digits = "0123456789abcdef";
        for (unsigned int i = 0; i < len; ++i) {
            hex.push_back(digits[out[i] >> 4]);
            hex.push_back(digits[out[i] & 0xf]);
        }
        return hex;
    }

  private:
    EVP_MD_CTX* ctx_;
};

// Raw little-endian f32 payload for one tensor.
std::vector<std::uint8_t> tensor_payload(const TensorBlob& t) {
    static_assert(sizeof(float) == 4);
    std::vector<std::uint8_t> bytes(4 * t.data.size());
    if (!t.data.empty()) std::memcpy(bytes.data(), t.data.data(), bytes.size());
    return bytes;
}

std::string tensor_file_name(const std::string& name) { return name + ".f32"; }

} // namespace

std::string sha256_hex(const std::uint8_t* data, std::size_t size) {
    Sha256 h;
    h.update(data, size);
    return h.hex();
}

std::string sha256_file(const std::filesystem::path& path) {
    auto bytes = read_file_bytes(path);
    return sha256_hex(bytes.data(), bytes.size());
}

std::string checkpoint_digest(const Checkpoint& ckpt) {
    std::vector<const TensorBlob*> sorted;
    sorted.reserve(ckpt.tensors.size());
    for (const auto& t : ckpt.tensors) sorted.push_back(&t);
    std::sort(sorted.begin(), sorted.end(),
              [](const TensorBlob* a, const TensorBlob* b) { return a->name < b->name; });
    Sha256 h;
    for (const TensorBlob* t : sorted) {
        auto payload = tensor_payload(*t);
        h.update(payload.data(), payload.size());
    }
    return h.hex();
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    if (ckpt.kind != "vae" && ckpt.kind != "diffusion")
        throw_error(ErrorKind::validation,
                    fmt::format("unknown checkpoint kind '{}'", ckpt.kind));
    {
        std::vector<std::string> names;
        for (const auto& t : ckpt.tensors) names.push_back(t.name);
        std::sort(names.begin(), names.end());
        if (std::adjacent_find(names.begin(), names.end()) != names.end())
            throw_error(ErrorKind::validation, "duplicate tensor names in checkpoint");
    }

    const auto staging = path.parent_path() / (path.filename().string() + ".tmp");
    std::filesystem::remove_all(staging);
    std::filesystem::create_directories(staging / "tensors");

    json tensors = json::array();
    for (const auto& t : ckpt.tensors) {
        tensors.push_back({{"name", t.name}, {"shape", t.shape}});
        write_file_bytes(staging / "tensors" / tensor_file_name(t.name), tensor_payload(t));
    }
    json meta{{"kind", ckpt.kind},
              {"format_version", ckpt.format_version},
              {"metadata", ckpt.metadata},
              {"digest", checkpoint_digest(ckpt)},
              {"tensors", tensors}};
    {
        std::ofstream out(staging / "meta.json", std::ios::trunc);
        if (!out)
            throw_error(ErrorKind::io,
                        fmt::format("cannot write {}", (staging / "meta.json").string()));
        out << meta.dump(2) << "\n";
    }

    std::filesystem::remove_all(path);
    std::filesystem::rename(staging, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    const auto meta_path = path / "meta.json";
    std::ifstream in(meta_path);
    if (!in)
        throw_error(ErrorKind::io, fmt::format("cannot open {}", meta_path.string()));
    json meta;
    try {
        in >> meta;
    } catch (const json::exception& e) {
        throw_error(ErrorKind::io, fmt::format("bad checkpoint metadata: {}", e.what()));
    }

    Checkpoint ckpt;
    ckpt.kind = meta.at("kind").get<std::string>();
    ckpt.format_version = meta.at("format_version").get<int>();
    if (ckpt.format_version != kCheckpointFormatVersion)
        throw_error(ErrorKind::version,
                    fmt::format("unsupported checkpoint format version {}",
                                ckpt.format_version));
    ckpt.metadata = meta.at("metadata");

    for (const auto& t : meta.at("tensors")) {
        TensorBlob blob;
        blob.name = t.at("name").get<std::string>();
        blob.shape = t.at("shape").get<std::vector<std::size_t>>();
        const auto file = path / "tensors" / tensor_file_name(blob.name);
        if (!std::filesystem::exists(file))
            throw_error(ErrorKind::missing_tensor,
                        fmt::format("missing tensor file '{}'", blob.name));
        auto bytes = read_file_bytes(file);
        std::size_t count = 1;
        for (auto d : blob.shape) count *= d;
        if (bytes.size() != 4 * count)
            throw_error(ErrorKind::io,
                        fmt::format("tensor '{}' payload is {} bytes, expected {}", blob.name,
                                    bytes.size(), 4 * count));
        blob.data.resize(count);
        if (count) std::memcpy(blob.data.data(), bytes.data(), bytes.size());
        ckpt.tensors.push_back(std::move(blob));
    }

    const auto expected = meta.at("digest").get<std::string>();
    const auto actual = checkpoint_digest(ckpt);
    if (actual != expected)
        throw_error(ErrorKind::integrity,
                    fmt::format("checkpoint digest mismatch: stored {}, computed {}", expected,
                                actual));
    return ckpt;
}

Manifest export_corpus(const std::vector<LabelMap>& masks, const std::filesystem::path& out_dir,
                       const ClassCatalog& catalog) {
    std::filesystem::create_directories(out_dir);
    Manifest manifest{{},
                      catalog,
                      masks.empty() ? 0 : masks.front().height(),
                      masks.empty() ? 0 : masks.front().width(),
                      out_dir};
    for (std::size_t i = 0; i < masks.size(); ++i) {
        const auto& m = masks[i];
        if (m.height() != manifest.height || m.width() != manifest.width)
            throw_error(ErrorKind::validation, "exported masks must share one resolution");
        const auto stem = fmt::format("mask_{:05}", i);
        const auto rel = std::filesystem::path("synthetic") / (stem + ".iism");
        write_iism(m, std::uint8_t(catalog.size()), out_dir / rel);
        render_png_file(m, catalog, out_dir / "synthetic" / (stem + ".png"));
        SliceRecord r;
        r.patient_id = "synthetic";
        r.slice_index = int(i);
        r.path = rel.generic_string();
        r.lesion = lesion_flag(m, catalog);
        r.split = Split::train; // released corpora are augmentation/training data
        manifest.records.push_back(std::move(r));
    }
    save_manifest(manifest, out_dir / "manifest.jsonl");
    return manifest;
}

} // namespace iism
