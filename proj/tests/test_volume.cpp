#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <string>

#include "dae/errors.hpp"
#include "dae/volume.hpp"

using namespace dae;

namespace {

struct TempFile {
    std::string path;
    explicit TempFile(std::string p) : path(std::move(p)) {}
    ~TempFile() { std::remove(path.c_str()); }
};

void write_bytes(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

} // namespace

TEST_CASE("all-zero volume round trip") {
    TempFile f("tmp_vol_zero.dvol");
    Volume v;
    v.dims = {2, 2, 2};
    v.voxels.assign(8, 0.0f);
    v.modality = ModalityTag{"CT"};
    save_volume(v, f.path);

    const Volume back = load_volume(f.path);
    CHECK(back.dims == std::array<std::size_t, 3>{2, 2, 2});
    CHECK(back.voxels == std::vector<float>(8, 0.0f));
    CHECK(modality_equal(back.modality, ModalityTag{"ct"}));
}

TEST_CASE("save/load round trip is identity on dims, modality and voxels") {
    TempFile f("tmp_vol_rt.dvol");
    Rng rng(3);
    Volume v;
    v.dims = {3, 4, 5};
    v.voxels.resize(60);
    for (auto& x : v.voxels) x = rng.uniform_f32();
    normalize_volume(v);
    v.modality = ModalityTag{"T1"};
    save_volume(v, f.path);
    const Volume back = load_volume(f.path);
    CHECK(back.dims == v.dims);
    CHECK(back.modality.name == "T1");
    CHECK(back.voxels == v.voxels);
}

TEST_CASE("load normalizes to [0, 1] via min-max") {
    TempFile f("tmp_vol_range.dvol");
    Volume v;
    v.dims = {1, 2, 2};
    v.voxels = {-100.0f, 0.0f, 100.0f, 300.0f};
    v.modality = ModalityTag{"CT"};
    save_volume(v, f.path);
    const Volume back = load_volume(f.path);
    CHECK(back.voxels[0] == 0.0f);
    CHECK(back.voxels[3] == 1.0f);
    CHECK(back.voxels[1] == doctest::Approx(0.25));
    CHECK(back.voxels[2] == doctest::Approx(0.5));
    CHECK(back.intensity_range.first == -100.0f);
    CHECK(back.intensity_range.second == 300.0f);
}

TEST_CASE("normalization is idempotent") {
    Rng rng(11);
    Volume v;
    v.dims = {4, 4, 4};
    v.voxels.resize(64);
    for (auto& x : v.voxels) x = static_cast<float>(rng.uniform(-5, 7));
    normalize_volume(v);
    const std::vector<float> once = v.voxels;
    normalize_volume(v);
    for (std::size_t i = 0; i < once.size(); ++i)
        CHECK(std::abs(v.voxels[i] - once[i]) <= 1e-7f);
}

TEST_CASE("format errors carry a byte offset") {
    TempFile f("tmp_vol_bad.dvol");

    write_bytes(f.path, "XVOL");
    CHECK_THROWS_WITH_AS(load_volume(f.path), doctest::Contains("bad magic"), FormatError);
    CHECK_THROWS_WITH_AS(load_volume(f.path), doctest::Contains("at byte 0"), FormatError);

    // valid header for 2x2x2 but only one voxel of payload
    Volume v;
    v.dims = {2, 2, 2};
    v.voxels.assign(8, 0.5f);
    v.modality = ModalityTag{"CT"};
    save_volume(v, f.path);
    {
        std::ifstream in(f.path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
        bytes.resize(bytes.size() - 30);
        write_bytes(f.path, bytes);
    }
    // header is 24 bytes (magic, version, dims, modality length, "CT"), so the
    // payload read starts and fails at byte 24
    CHECK_THROWS_WITH_AS(load_volume(f.path), doctest::Contains("truncated"), FormatError);
    CHECK_THROWS_WITH_AS(load_volume(f.path), doctest::Contains("at byte 24"), FormatError);

    // zero dimension
    std::string hdr = "DVOL";
    const auto put_u32 = [&hdr](std::uint32_t x) {
        for (int i = 0; i < 4; ++i) hdr.push_back(static_cast<char>((x >> (8 * i)) & 0xff));
    };
    put_u32(1);
    put_u32(2);
    put_u32(0);
    put_u32(2);
    hdr += '\x02';
    hdr += '\x00';
    hdr += "CT";
    write_bytes(f.path, hdr);
    CHECK_THROWS_WITH_AS(load_volume(f.path), doctest::Contains("zero dimension"), FormatError);
    CHECK_THROWS_WITH_AS(load_volume(f.path), doctest::Contains("at byte 12"), FormatError);
}

TEST_CASE("synth volumes are deterministic and share geometry across modalities") {
    const std::array<std::size_t, 3> dims{16, 16, 16};
    auto [va, la] = synth_volume(7, ModalityTag{"SYNTH_A"}, dims);
    auto [va2, la2] = synth_volume(7, ModalityTag{"SYNTH_A"}, dims);
    CHECK(va.voxels == va2.voxels);
    CHECK(la.labels == la2.labels);

    auto [vb, lb] = synth_volume(7, ModalityTag{"SYNTH_B"}, dims);
    auto [vc, lc] = synth_volume(7, ModalityTag{"SYNTH_C"}, dims);
    CHECK(la.labels == lb.labels);
    CHECK(la.labels == lc.labels);
    CHECK(va.voxels != vb.voxels);
    CHECK(va.voxels != vc.voxels);

    // at least one foreground voxel
    bool any_fg = false;
    for (auto l : la.labels) any_fg |= (l != 0);
    CHECK(any_fg);

    // all voxels stay inside [0, 1] for every modality transform
    for (const Volume* v : {&va, &vb, &vc})
        for (float x : v->voxels) {
            CHECK(x >= 0.0f);
            CHECK(x <= 1.0f);
        }

    CHECK_THROWS_AS(synth_volume(7, ModalityTag{"SYNTH_A"}, {4, 16, 16}), ParamError);
}

TEST_CASE("random crops") {
    auto [v, l] = synth_volume(5, ModalityTag{"SYNTH_A"}, {16, 16, 16});

    Rng rng(9);
    const Volume same = random_crop(v, {16, 16, 16}, rng);
    CHECK(same.voxels == v.voxels);

    Rng r1(42), r2(42);
    const Volume c1 = random_crop(v, {8, 8, 8}, r1);
    const Volume c2 = random_crop(v, {8, 8, 8}, r2);
    CHECK(c1.voxels == c2.voxels);
    CHECK(c1.numel() == 512);
    CHECK(modality_equal(c1.modality, v.modality));

    CHECK_THROWS_AS(random_crop(v, {17, 8, 8}, rng), ParamError);
}

TEST_CASE("paper-scale crop dimensions") {
    Volume v;
    v.dims = {128, 128, 128};
    v.voxels.assign(v.numel(), 0.25f);
    v.modality = ModalityTag{"CT"};
    Rng rng(1);
    const Volume c = random_crop(v, {96, 96, 96}, rng);
    CHECK(c.dims == std::array<std::size_t, 3>{96, 96, 96});
    CHECK(c.numel() == 96u * 96u * 96u);
}

TEST_CASE("manifest parsing") {
    const std::string good =
        "# comment line\n"
        "a.dvol\tCT\ttrain\n"
        "b.dvol\tT1\tval   # trailing comment\n"
        "\n"
        "c.dvol\tt1\ttest\n";
    const Manifest m = Manifest::parse(good, "mem");
    CHECK(m.entries.size() == 3);
    CHECK(m.entries[1].split == Split::val);
    CHECK(m.split_entries(Split::train).size() == 1);
    CHECK(m.modality_keys(Split::test) == std::vector<std::string>{"t1"});

    CHECK_THROWS_WITH_AS(Manifest::parse("a.dvol\tCT\ttrain\na.dvol\tT1\tval\n", "mem"),
                         doctest::Contains("duplicate path"), DataError);
    CHECK_THROWS_WITH_AS(Manifest::parse("a.dvol\tCT\tdev\n", "mem"),
                         doctest::Contains("unknown split"), DataError);
    CHECK_THROWS_AS(Manifest::parse("a.dvol CT train\n", "mem"), DataError);
}

TEST_CASE("label volume round trip") {
    TempFile f("tmp_labels.dvol");
    auto [v, l] = synth_volume(13, ModalityTag{"SYNTH_A"}, {8, 8, 8});
    save_label_volume(l, f.path);
    const LabelVolume back = load_label_volume(f.path);
    CHECK(back.dims == l.dims);
    CHECK(back.labels == l.labels);
    CHECK(label_path_for("data/vol_0001.dvol") == "data/vol_0001.labels.dvol");
}
