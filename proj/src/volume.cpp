#include "dae/volume.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "dae/errors.hpp"

namespace dae {

namespace {

std::string lower(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

// FNV-1a, used to derive per-modality intensity transforms for names without
// a canonical one.
std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

void put_u32(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

struct Reader {
    const std::string& buf;
    const std::string& origin;
    std::size_t pos = 0;

    [[noreturn]] void fail(const std::string& what) const {
        throw FormatError(origin + ": " + what + " at byte " + std::to_string(pos));
    }

    void need(std::size_t n, const char* what) {
        if (pos + n > buf.size())
            fail(std::string("truncated ") + what + " (need " + std::to_string(n) +
                 " bytes, have " + std::to_string(buf.size() - pos) + ")");
    }

    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i)
            v = (v << 8) | static_cast<unsigned char>(buf[pos + static_cast<std::size_t>(i)]);
        pos += 4;
        return v;
    }

    std::uint16_t u16(const char* what) {
        need(2, what);
        const std::uint16_t v = static_cast<std::uint16_t>(
            static_cast<unsigned char>(buf[pos]) |
            (static_cast<unsigned char>(buf[pos + 1]) << 8));
        pos += 2;
        return v;
    }
};

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("short write to '" + path + "'");
}

std::string encode_dvol(std::array<std::size_t, 3> dims, const std::string& modality,
                        const float* voxels) {
    std::string out;
    const std::size_t n = dims[0] * dims[1] * dims[2];
    out.reserve(18 + modality.size() + n * 4);
    out += "DVOL";
    put_u32(out, 1);
    put_u32(out, static_cast<std::uint32_t>(dims[0]));
    put_u32(out, static_cast<std::uint32_t>(dims[1]));
    put_u32(out, static_cast<std::uint32_t>(dims[2]));
    put_u16(out, static_cast<std::uint16_t>(modality.size()));
    out += modality;
    const std::size_t base = out.size();
    out.resize(base + n * 4);
    std::memcpy(out.data() + base, voxels, n * 4); // host is little-endian
    return out;
}

struct DvolPayload {
    std::array<std::size_t, 3> dims;
    std::string modality;
    std::vector<float> voxels;
};

DvolPayload decode_dvol(const std::string& path) {
    const std::string buf = read_file(path);
    Reader r{buf, path};
    r.need(4, "magic");
    if (buf.compare(0, 4, "DVOL") != 0) r.fail("bad magic");
    r.pos = 4;
    const std::uint32_t version = r.u32("version");
    if (version != 1) r.fail("unsupported version " + std::to_string(version));
    DvolPayload p;
    for (int axis = 0; axis < 3; ++axis) {
        const std::uint32_t d = r.u32("dimension");
        if (d == 0) {
            r.pos -= 4;
            r.fail("zero dimension");
        }
        p.dims[static_cast<std::size_t>(axis)] = d;
    }
    const std::uint16_t mod_len = r.u16("modality length");
    r.need(mod_len, "modality string");
    p.modality = buf.substr(r.pos, mod_len);
    if (p.modality.empty()) r.fail("empty modality");
    r.pos += mod_len;
    const std::size_t n = p.dims[0] * p.dims[1] * p.dims[2];
    r.need(n * 4, "voxel payload");
    p.voxels.resize(n);
    std::memcpy(p.voxels.data(), buf.data() + r.pos, n * 4);
    r.pos += n * 4;
    return p;
}

} // namespace

bool modality_equal(const ModalityTag& a, const ModalityTag& b) {
    return lower(a.name) == lower(b.name);
}

std::string modality_key(const ModalityTag& tag) { return lower(tag.name); }

void normalize_volume(Volume& v) {
    if (v.voxels.empty()) return;
    float lo = v.voxels[0], hi = v.voxels[0];
    for (float x : v.voxels) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
    }
    v.intensity_range = {lo, hi};
    if (hi > lo) {
        // true division so lo -> 0 and hi -> 1 exactly, making a second
        // normalization the bit-exact identity
        const float range = hi - lo;
        for (auto& x : v.voxels) x = (x - lo) / range;
    } else {
        for (auto& x : v.voxels) x = 0.0f;
    }
}

Volume load_volume(const std::string& path) {
    DvolPayload p = decode_dvol(path);
    Volume v;
    v.dims = p.dims;
    v.voxels = std::move(p.voxels);
    v.modality = ModalityTag{std::move(p.modality)};
    normalize_volume(v);
    return v;
}

void save_volume(const Volume& v, const std::string& path) {
    if (v.modality.name.empty()) throw ContractError("save_volume: empty modality tag");
    write_file(path, encode_dvol(v.dims, v.modality.name, v.voxels.data()));
}

LabelVolume load_label_volume(const std::string& path) {
    DvolPayload p = decode_dvol(path);
    LabelVolume lv;
    lv.dims = p.dims;
    lv.labels.resize(p.voxels.size());
    for (std::size_t i = 0; i < p.voxels.size(); ++i)
        lv.labels[i] = static_cast<std::uint8_t>(std::lround(p.voxels[i]));
    return lv;
}

void save_label_volume(const LabelVolume& lv, const std::string& path) {
    std::vector<float> as_float(lv.labels.begin(), lv.labels.end());
    write_file(path, encode_dvol(lv.dims, "LABEL", as_float.data()));
}

std::string label_path_for(const std::string& volume_path) {
    const auto dot = volume_path.rfind('.');
    if (dot == std::string::npos) return volume_path + ".labels";
    return volume_path.substr(0, dot) + ".labels" + volume_path.substr(dot);
}

std::pair<Volume, LabelVolume> synth_volume(std::uint64_t seed, const ModalityTag& modality,
                                            std::array<std::size_t, 3> dims) {
    for (auto d : dims)
        if (d < 8)
            throw ParamError("synth_volume: dims must be >= 8 per axis, got " +
                             std::to_string(d));
    if (modality.name.empty()) throw ParamError("synth_volume: empty modality tag");

    // Geometry depends only on the seed so all modalities of one phantom
    // share the label volume.
    Rng geo(seed);
    const std::size_t count = 1 + geo.below(4);
    struct Ellipsoid {
        double cx, cy, cz, rx, ry, rz;
    };
    std::vector<Ellipsoid> shapes(count);
    for (auto& e : shapes) {
        e.cz = geo.uniform(0.3, 0.7) * static_cast<double>(dims[0]);
        e.cy = geo.uniform(0.3, 0.7) * static_cast<double>(dims[1]);
        e.cx = geo.uniform(0.3, 0.7) * static_cast<double>(dims[2]);
        e.rz = std::max(1.5, geo.uniform(0.125, 0.25) * static_cast<double>(dims[0]));
        e.ry = std::max(1.5, geo.uniform(0.125, 0.25) * static_cast<double>(dims[1]));
        e.rx = std::max(1.5, geo.uniform(0.125, 0.25) * static_cast<double>(dims[2]));
    }

    Volume v;
    v.dims = dims;
    v.modality = modality;
    v.voxels.assign(dims[0] * dims[1] * dims[2], 0.05f);
    LabelVolume lv;
    lv.dims = dims;
    lv.labels.assign(v.voxels.size(), 0);

    for (std::size_t e = 0; e < count; ++e) {
        const auto& s = shapes[e];
        const float intensity = 0.25f + 0.7f * static_cast<float>(e) / 3.0f;
        for (std::size_t d = 0; d < dims[0]; ++d) {
            const double dz = (static_cast<double>(d) - s.cz) / s.rz;
            for (std::size_t h = 0; h < dims[1]; ++h) {
                const double dy = (static_cast<double>(h) - s.cy) / s.ry;
                for (std::size_t w = 0; w < dims[2]; ++w) {
                    const double dx = (static_cast<double>(w) - s.cx) / s.rx;
                    if (dz * dz + dy * dy + dx * dx <= 1.0) {
                        const std::size_t idx = (d * dims[1] + h) * dims[2] + w;
                        v.voxels[idx] = intensity;
                        lv.labels[idx] = static_cast<std::uint8_t>(e + 1);
                    }
                }
            }
        }
    }

    // Modality-specific monotone transform on [0, 1].
    const std::string key = modality_key(modality);
    if (key == "synth_b") {
        for (auto& x : v.voxels) x = 1.0f - x;
    } else if (key == "synth_c") {
        for (auto& x : v.voxels) x = std::sqrt(x);
    } else if (key != "synth_a") {
        const double gamma =
            0.5 + 1.5 * static_cast<double>(fnv1a(key) % 1024) / 1024.0;
        for (auto& x : v.voxels) x = std::pow(x, static_cast<float>(gamma));
    }

    float lo = v.voxels[0], hi = v.voxels[0];
    for (float x : v.voxels) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
    }
    v.intensity_range = {lo, hi};
    return {std::move(v), std::move(lv)};
}

std::array<std::size_t, 3> random_crop_offset(std::array<std::size_t, 3> dims,
                                              std::array<std::size_t, 3> size, Rng& rng) {
    std::array<std::size_t, 3> offset{};
    for (int i = 0; i < 3; ++i) {
        if (size[static_cast<std::size_t>(i)] > dims[static_cast<std::size_t>(i)])
            throw ParamError("crop size " + std::to_string(size[static_cast<std::size_t>(i)]) +
                             " exceeds volume extent " +
                             std::to_string(dims[static_cast<std::size_t>(i)]));
        offset[static_cast<std::size_t>(i)] = rng.below(
            dims[static_cast<std::size_t>(i)] - size[static_cast<std::size_t>(i)] + 1);
    }
    return offset;
}

std::array<std::size_t, 3> center_crop_offset(std::array<std::size_t, 3> dims,
                                              std::array<std::size_t, 3> size) {
    std::array<std::size_t, 3> offset{};
    for (std::size_t i = 0; i < 3; ++i) {
        if (size[i] > dims[i])
            throw ParamError("crop size " + std::to_string(size[i]) +
                             " exceeds volume extent " + std::to_string(dims[i]));
        offset[i] = (dims[i] - size[i]) / 2;
    }
    return offset;
}

Volume crop_at(const Volume& v, std::array<std::size_t, 3> offset,
               std::array<std::size_t, 3> size) {
    Volume out;
    out.dims = size;
    out.modality = v.modality;
    out.intensity_range = v.intensity_range;
    out.voxels.resize(size[0] * size[1] * size[2]);
    for (std::size_t d = 0; d < size[0]; ++d)
        for (std::size_t h = 0; h < size[1]; ++h) {
            const float* src =
                &v.voxels[((offset[0] + d) * v.dims[1] + offset[1] + h) * v.dims[2] +
                          offset[2]];
            float* dst = &out.voxels[(d * size[1] + h) * size[2]];
            std::copy(src, src + size[2], dst);
        }
    return out;
}

LabelVolume crop_at(const LabelVolume& lv, std::array<std::size_t, 3> offset,
                    std::array<std::size_t, 3> size) {
    LabelVolume out;
    out.dims = size;
    out.labels.resize(size[0] * size[1] * size[2]);
    for (std::size_t d = 0; d < size[0]; ++d)
        for (std::size_t h = 0; h < size[1]; ++h) {
            const std::uint8_t* src =
                &lv.labels[((offset[0] + d) * lv.dims[1] + offset[1] + h) * lv.dims[2] +
                           offset[2]];
            std::uint8_t* dst = &out.labels[(d * size[1] + h) * size[2]];
            std::copy(src, src + size[2], dst);
        }
    return out;
}

Volume random_crop(const Volume& v, std::array<std::size_t, 3> size, Rng& rng) {
    return crop_at(v, random_crop_offset(v.dims, size, rng), size);
}

std::string split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "?";
}

namespace {

Split parse_split(const std::string& s, const std::string& origin, std::size_t line_no) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw DataError(origin + ":" + std::to_string(line_no) + ": unknown split '" + s +
                    "' (expected train, val or test)");
}

} // namespace

Manifest Manifest::parse(const std::string& text, const std::string& origin) {
    Manifest m;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t'))
            line.pop_back();
        if (line.empty()) continue;
        const auto t1 = line.find('\t');
        const auto t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
        if (t1 == std::string::npos || t2 == std::string::npos)
            throw DataError(origin + ":" + std::to_string(line_no) +
                            ": expected <path>\\t<modality>\\t<split>");
        ManifestEntry e;
        e.path = line.substr(0, t1);
        e.modality = ModalityTag{line.substr(t1 + 1, t2 - t1 - 1)};
        e.split = parse_split(line.substr(t2 + 1), origin, line_no);
        if (e.path.empty() || e.modality.name.empty())
            throw DataError(origin + ":" + std::to_string(line_no) + ": empty field");
        for (const auto& prev : m.entries)
            if (prev.path == e.path)
                throw DataError(origin + ":" + std::to_string(line_no) +
                                ": duplicate path '" + e.path + "'");
        m.entries.push_back(std::move(e));
    }
    return m;
}

Manifest Manifest::load(const std::string& path) {
    return parse(read_file(path), path);
}

void Manifest::save(const std::string& path) const {
    std::string out = "# <path>\t<modality>\t<split>\n";
    for (const auto& e : entries)
        out += e.path + "\t" + e.modality.name + "\t" + split_name(e.split) + "\n";
    write_file(path, out);
}

std::vector<const ManifestEntry*> Manifest::split_entries(Split s) const {
    std::vector<const ManifestEntry*> out;
    for (const auto& e : entries)
        if (e.split == s) out.push_back(&e);
    return out;
}

std::vector<std::string> Manifest::modality_keys(Split s) const {
    std::vector<std::string> keys;
    for (const auto& e : entries) {
        if (e.split != s) continue;
        const std::string key = modality_key(e.modality);
        if (std::find(keys.begin(), keys.end(), key) == keys.end()) keys.push_back(key);
    }
    return keys;
}

} // namespace dae
