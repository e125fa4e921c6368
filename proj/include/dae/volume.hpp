#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dae/rng.hpp"

namespace dae {

// Acquisition type of a volume; compared case-insensitively.
struct ModalityTag {
    std::string name;
};

bool modality_equal(const ModalityTag& a, const ModalityTag& b);
std::string modality_key(const ModalityTag& tag); // lower-cased name

// A dense 3D scalar field, row-major with D slowest.
struct Volume {
    std::array<std::size_t, 3> dims{}; // (D, H, W)
    std::vector<float> voxels;
    ModalityTag modality;
    std::pair<float, float> intensity_range{0.0f, 1.0f}; // range seen at normalization

    std::size_t numel() const { return dims[0] * dims[1] * dims[2]; }
    float at(std::size_t d, std::size_t h, std::size_t w) const {
        return voxels[(d * dims[1] + h) * dims[2] + w];
    }
};

// Per-voxel ellipsoid index for the synthetic phantoms (0 = background).
struct LabelVolume {
    std::array<std::size_t, 3> dims{};
    std::vector<std::uint8_t> labels;
};

// Min-max rescale to [0, 1] in place; records the pre-normalization range.
// A constant volume maps to all zeros. Idempotent.
void normalize_volume(Volume& v);

// DVOL container (little-endian): magic "DVOL", u32 version=1, u32 D, u32 H,
// u32 W, u16 modality length, modality bytes, then D*H*W f32 voxels.
Volume load_volume(const std::string& path);          // normalizes on load
void save_volume(const Volume& v, const std::string& path);

// Label volumes reuse the DVOL container with modality "LABEL" and class
// indices stored as floats; loading does not normalize.
LabelVolume load_label_volume(const std::string& path);
void save_label_volume(const LabelVolume& lv, const std::string& path);
std::string label_path_for(const std::string& volume_path);

// Deterministic phantom: 1-4 axis-aligned ellipsoids of distinct intensity
// on a dim >= 8 grid. The geometry (and therefore the label volume) depends
// only on the seed; the modality applies a monotone intensity transform.
std::pair<Volume, LabelVolume> synth_volume(std::uint64_t seed, const ModalityTag& modality,
                                            std::array<std::size_t, 3> dims);

// Contiguous sub-volume with uniformly drawn offsets.
Volume random_crop(const Volume& v, std::array<std::size_t, 3> size, Rng& rng);

// Deterministic crops used when a volume and its labels must stay aligned.
std::array<std::size_t, 3> random_crop_offset(std::array<std::size_t, 3> dims,
                                              std::array<std::size_t, 3> size, Rng& rng);
std::array<std::size_t, 3> center_crop_offset(std::array<std::size_t, 3> dims,
                                              std::array<std::size_t, 3> size);
Volume crop_at(const Volume& v, std::array<std::size_t, 3> offset,
               std::array<std::size_t, 3> size);
LabelVolume crop_at(const LabelVolume& lv, std::array<std::size_t, 3> offset,
                    std::array<std::size_t, 3> size);

enum class Split { train, val, test };
std::string split_name(Split s);

struct ManifestEntry {
    std::string path;
    ModalityTag modality;
    Split split;
};

// One record per line: <path>\t<modality>\t<split>, '#' starts a comment.
struct Manifest {
    std::vector<ManifestEntry> entries;

    static Manifest load(const std::string& path);
    static Manifest parse(const std::string& text, const std::string& origin);
    void save(const std::string& path) const;

    std::vector<const ManifestEntry*> split_entries(Split s) const;
    std::vector<std::string> modality_keys(Split s) const; // distinct, in first-seen order
};

} // namespace dae
