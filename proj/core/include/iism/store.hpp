#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iism/dataset.hpp"
#include "iism/label.hpp"

namespace iism {

inline constexpr int kCheckpointFormatVersion = 1;

struct TensorBlob {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<float> data; // 32-bit little-endian on disk
};

// Versioned parameter set plus metadata. The digest is SHA-256 over tensor
// payloads concatenated in name-sorted order, so any payload tampering fails
// the load-time integrity check. Timestamps live in metadata and are excluded
// from the digest.
struct Checkpoint {
    std::string kind; // "vae" or "diffusion"
    int format_version = kCheckpointFormatVersion;
    nlohmann::json metadata;
    std::vector<TensorBlob> tensors;

    const TensorBlob& tensor(const std::string& name) const;
    bool has_tensor(const std::string& name) const;
};

std::string checkpoint_digest(const Checkpoint& ckpt);

// Directory layout: meta.json plus tensors/<name>.f32. The write is staged in
// a temp directory and renamed into place.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string sha256_hex(const std::uint8_t* data, std::size_t size);
std::string sha256_file(const std::filesystem::path& path);

// Write masks as IISM1 + PNG renders + a JSON-lines manifest, the layout used
// for public release of a sampled corpus.
Manifest export_corpus(const std::vector<LabelMap>& masks, const std::filesystem::path& out_dir,
                       const ClassCatalog& catalog);

} // namespace iism
