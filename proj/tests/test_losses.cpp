#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cctype>
#include <cmath>
#include <vector>

#include "dae/gradcheck.hpp"
#include "dae/losses.hpp"

using namespace dae;

using DT = TensorT<double>;
using DTape = TapeT<double>;

namespace {

// Row-normalize via the same op chain the model's latent head uses, so
// finite-difference perturbations of the raw features stay valid inputs
// for similarity().
template <typename T>
TensorT<T> normalize_rows(const TensorT<T>& z) {
    std::vector<TensorT<T>> rows;
    const std::size_t b = z.dim(0);
    for (std::size_t i = 0; i < b; ++i) {
        const TensorT<T> row = slice(z, 0, i, 1);
        const TensorT<T> ss = add_scalar(sum(mul(row, row)), T(1e-12));
        rows.push_back(mul_by_scalar(row, pow_scalar(ss, T(-0.5))));
    }
    return concat(rows, 0);
}

DT random_rows(std::size_t b, std::size_t l, Rng& rng) {
    DT z = DT::zeros({b, l});
    for (auto& v : z.data()) v = rng.normal();
    return z;
}

} // namespace

TEST_CASE("similarity of identical unit vectors") {
    const float s = std::exp(0.07f);
    auto z = DiffTensor::from({2, 2}, {1, 0, 1, 0});
    const SimilarityMatrix sim = similarity(z, 0.07f);
    CHECK(sim.values.dim(0) == 2);
    for (float v : sim.values.data()) CHECK(v == doctest::Approx(s).epsilon(1e-6));
    // exp(0.07) ~ 1.0725 is the scale prescribed for the similarity logits
    CHECK(s == doctest::Approx(1.0725082).epsilon(1e-6));
}

TEST_CASE("similarity of orthogonal unit vectors has zero off-diagonal") {
    auto z = DiffTensor::from({2, 2}, {1, 0, 0, 1});
    const SimilarityMatrix sim = similarity(z, 0.07f);
    CHECK(sim.values.data()[1] == doctest::Approx(0.0));
    CHECK(sim.values.data()[2] == doctest::Approx(0.0));
    CHECK(sim.values.data()[0] == doctest::Approx(std::exp(0.07f)));
}

TEST_CASE("similarity rejects non-normalized rows") {
    auto z = DiffTensor::from({2, 2}, {2, 0, 0, 1});
    CHECK_THROWS_AS(similarity(z, 0.07f), ContractError);
}

TEST_CASE("label matrix examples") {
    auto m1 = label_matrix({ModalityTag{"CT"}, ModalityTag{"CT"}});
    CHECK(m1.values == std::vector<std::uint8_t>{1, 1, 1, 1});

    auto m2 = label_matrix({ModalityTag{"CT"}, ModalityTag{"T1"}});
    CHECK(m2.values == std::vector<std::uint8_t>{1, 0, 0, 1});

    auto m3 = label_matrix({ModalityTag{"T1"}, ModalityTag{"T2"}, ModalityTag{"T1"}});
    CHECK(m3.values == std::vector<std::uint8_t>{1, 0, 1, 0, 1, 0, 1, 0, 1});

    // case-insensitive
    auto m4 = label_matrix({ModalityTag{"ct"}, ModalityTag{"CT"}});
    CHECK(m4.values == std::vector<std::uint8_t>{1, 1, 1, 1});
}

TEST_CASE("label matrix vs brute-force oracle for every list up to B=4") {
    const std::vector<std::string> tags{"CT", "t1", "FLAIR"};
    // independent oracle: direct pairwise comparison with its own lowercasing
    const auto oracle_eq = [](const std::string& a, const std::string& b) {
        if (a.size() != b.size()) return false;
        for (std::size_t i = 0; i < a.size(); ++i)
            if (std::tolower(static_cast<unsigned char>(a[i])) !=
                std::tolower(static_cast<unsigned char>(b[i])))
                return false;
        return true;
    };
    for (std::size_t b = 1; b <= 4; ++b) {
        std::vector<std::size_t> pick(b, 0);
        for (;;) {
            std::vector<ModalityTag> mods;
            for (auto i : pick) mods.push_back(ModalityTag{tags[i]});
            const LabelMatrix got = label_matrix(mods);
            CHECK(got.batch == b);
            for (std::size_t i = 0; i < b; ++i) {
                CHECK(got.values[i * b + i] == 1); // diagonal
                for (std::size_t j = 0; j < b; ++j) {
                    CHECK(got.values[i * b + j] ==
                          (oracle_eq(mods[i].name, mods[j].name) ? 1 : 0));
                    CHECK(got.values[i * b + j] == got.values[j * b + i]); // symmetric
                }
            }
            // next assignment
            std::size_t d = 0;
            while (d < b && ++pick[d] == tags.size()) pick[d++] = 0;
            if (d == b) break;
        }
    }
}

TEST_CASE("cmcl closed-form value for B=2 identity labels") {
    // diagonal s = exp(0.07), off-diagonal s = 0
    const double s = std::exp(0.07);
    SimilarityMatrixT<double> sim;
    sim.temperature = 0.07;
    sim.values = DT::from({2, 2}, {s, 0.0, 0.0, s});
    LabelMatrix labels;
    labels.batch = 2;
    labels.values = {1, 0, 0, 1};

    const double loss = cmcl_loss(sim, labels, 0.05).item();
    // independent evaluation: mean of the four BCE cells
    const auto bce = [](double logit, double y) {
        const double p = 1.0 / (1.0 + std::exp(-logit));
        return -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
    };
    const double expected = 0.05 * (2.0 * bce(s, 1.0) + 2.0 * bce(0.0, 0.0)) / 4.0;
    CHECK(loss == doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("cmcl monotonicity: loss falls as all-positive similarities rise") {
    LabelMatrix labels;
    labels.batch = 2;
    labels.values = {1, 1, 1, 1};
    double prev = 1e30;
    for (double raw : {-2.0, -0.5, 0.0, 1.0, 3.0}) {
        SimilarityMatrixT<double> sim;
        sim.temperature = 0.07;
        sim.values = DT::full({2, 2}, raw);
        const double loss = cmcl_loss(sim, labels, 0.05).item();
        CHECK(loss < prev);
        prev = loss;
    }
}

TEST_CASE("cmcl analytic gradient signs: positives down, negatives up") {
    Rng rng(5);
    SimilarityMatrixT<double> sim;
    sim.temperature = 0.07;
    sim.values = random_rows(3, 3, rng);
    sim.values.set_requires_grad(true);
    LabelMatrix labels;
    labels.batch = 3;
    labels.values = {1, 0, 1, 0, 1, 0, 1, 0, 1};

    DTape tape;
    DTape::Scope scope(tape);
    tape.backward(cmcl_loss(sim, labels, 0.05));
    for (std::size_t i = 0; i < 9; ++i) {
        if (labels.values[i])
            CHECK(sim.values.grad()[i] < 0.0); // raising a positive pair lowers the loss
        else
            CHECK(sim.values.grad()[i] > 0.0);
    }
}

TEST_CASE("cmcl is invariant under batch permutation") {
    Rng rng(8);
    DT zraw = random_rows(4, 6, rng);
    const std::vector<ModalityTag> mods{ModalityTag{"CT"}, ModalityTag{"T1"},
                                        ModalityTag{"CT"}, ModalityTag{"T2"}};
    const std::vector<std::size_t> perm{2, 0, 3, 1};

    DT zp = DT::zeros({4, 6});
    std::vector<ModalityTag> mods_p;
    for (std::size_t i = 0; i < 4; ++i) {
        mods_p.push_back(mods[perm[i]]);
        for (std::size_t j = 0; j < 6; ++j)
            zp.data()[i * 6 + j] = zraw.data()[perm[i] * 6 + j];
    }
    const double a =
        cmcl_loss(similarity(normalize_rows(zraw), 0.07), label_matrix(mods), 0.05).item();
    const double b =
        cmcl_loss(similarity(normalize_rows(zp), 0.07), label_matrix(mods_p), 0.05).item();
    // same multiset of BCE cells, reduction order differs
    CHECK(a == doctest::Approx(b).epsilon(1e-12));
}

TEST_CASE("cmcl gradient wrt raw features vs finite differences") {
    Rng rng(21);
    const std::vector<ModalityTag> mods{ModalityTag{"CT"}, ModalityTag{"T1"},
                                        ModalityTag{"CT"}};
    for (int seed = 0; seed < 20; ++seed) {
        DT zraw = random_rows(3, 5, rng);
        const double err = max_rel_err_fd<double>(
            [&] {
                return cmcl_loss(similarity(normalize_rows(zraw), 0.07),
                                 label_matrix(mods), 0.05);
            },
            {&zraw}, 1e-3);
        CHECK(err < 1e-4);
    }
}

TEST_CASE("pretrain loss: totals, parts and the alpha factor") {
    Rng rng(4);
    auto recon = DiffTensor::zeros({4, 4});
    for (auto& v : recon.data()) v = rng.uniform_f32();
    auto target = recon; // perfect reconstruction
    auto zraw = DiffTensor::zeros({2, 8});
    for (auto& v : zraw.data()) v = static_cast<float>(rng.normal());
    auto z = normalize_rows(zraw);
    const std::vector<ModalityTag> mods{ModalityTag{"CT"}, ModalityTag{"T1"}};

    const PretrainLoss zero_alpha = pretrain_loss(recon, target, z, mods, 0.0f, 0.07f);
    CHECK(zero_alpha.l1_part.item() == 0.0f);
    CHECK(zero_alpha.cmcl_part.item() == 0.0f);
    CHECK(zero_alpha.total.item() == 0.0f);

    auto recon2 = DiffTensor::zeros({4, 4});
    for (auto& v : recon2.data()) v = rng.uniform_f32();
    const PretrainLoss full = pretrain_loss(recon2, target, z, mods);
    // bit-exact additivity of the reported parts
    CHECK(full.total.item() == full.l1_part.item() + full.cmcl_part.item());
    // the CMCL part carries the alpha = 0.05 scale
    const PretrainLoss unit = pretrain_loss(recon2, target, z, mods, 1.0f, 0.07f);
    CHECK(full.cmcl_part.item() ==
          doctest::Approx(0.05f * unit.cmcl_part.item()).epsilon(1e-6));
}

TEST_CASE("dice loss: perfect one-hot prediction") {
    // 2 classes over 8 voxels
    std::vector<std::uint8_t> gt{0, 1, 1, 0, 0, 0, 1, 0};
    std::vector<float> pred(2 * 8, 0.0f);
    for (std::size_t i = 0; i < 8; ++i) pred[gt[i] * 8 + i] = 1.0f;
    const float loss = dice_loss(DiffTensor::from({2, 8}, pred), gt, 1e-5f).item();
    CHECK(loss >= 0.0f);
    CHECK(loss <= 1e-4f);
}

TEST_CASE("dice loss: uniform prediction on all-background labels") {
    const std::size_t v = 64;
    std::vector<std::uint8_t> gt(v, 0);
    const DiffTensor pred = DiffTensor::full({2, v}, 0.5f);
    const double s = 1e-5;
    // class 0: (2*0.5V + s)/(0.5V + V + s); class 1: s/(0.5V + 0 + s)
    const double vd = static_cast<double>(v);
    const double d0 = (vd + s) / (1.5 * vd + s);
    const double d1 = s / (0.5 * vd + s);
    const double expected = 1.0 - 0.5 * (d0 + d1);
    CHECK(dice_loss(pred, gt, 1e-5f).item() == doctest::Approx(expected).epsilon(1e-5));
    CHECK(d0 == doctest::Approx(2.0 / 3.0).epsilon(1e-3));
}

TEST_CASE("dice loss stays in [0, 1] and is permutation symmetric") {
    Rng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t v = 30;
        const std::size_t k = 2 + rng.below(3);
        DT logits = DT::zeros({k, v});
        for (auto& x : logits.data()) x = rng.normal();
        const DT pred = softmax(logits, 0);
        std::vector<std::uint8_t> gt(v);
        for (auto& g : gt) g = static_cast<std::uint8_t>(rng.below(k));
        const double loss = dice_loss(pred, gt, kDiceSmooth).item();
        CHECK(loss >= 0.0);
        CHECK(loss <= 1.0);

        // identical voxel permutation of pred and gt
        std::vector<std::size_t> perm(v);
        for (std::size_t i = 0; i < v; ++i) perm[i] = i;
        for (std::size_t i = v; i > 1; --i)
            std::swap(perm[i - 1], perm[rng.below(i)]);
        DT pred_p = DT::zeros({k, v});
        std::vector<std::uint8_t> gt_p(v);
        for (std::size_t i = 0; i < v; ++i) {
            gt_p[i] = gt[perm[i]];
            for (std::size_t c = 0; c < k; ++c)
                pred_p.data()[c * v + i] = pred.data()[c * v + perm[i]];
        }
        CHECK(dice_loss(pred_p, gt_p, kDiceSmooth).item() ==
              doctest::Approx(loss).epsilon(1e-12));
    }
}

TEST_CASE("dice loss contract errors") {
    std::vector<std::uint8_t> gt{0, 1, 2, 0};
    const DiffTensor pred = DiffTensor::full({2, 4}, 0.5f);
    CHECK_THROWS_AS(dice_loss(pred, gt, 1e-5f), ContractError); // label 2 vs K=2

    std::vector<std::uint8_t> ok{0, 1, 1, 0};
    const DiffTensor bad = DiffTensor::full({2, 4}, 0.3f); // columns sum to 0.6
    CHECK_THROWS_AS(dice_loss(bad, ok, 1e-5f), ContractError);
}

TEST_CASE("dice gradient through softmax vs finite differences") {
    Rng rng(17);
    for (int seed = 0; seed < 20; ++seed) {
        const std::size_t v = 12, k = 3;
        DT logits = DT::zeros({k, v});
        for (auto& x : logits.data()) x = rng.normal();
        std::vector<std::uint8_t> gt(v);
        for (auto& g : gt) g = static_cast<std::uint8_t>(rng.below(k));
        const double err = max_rel_err_fd<double>(
            [&] { return dice_loss(softmax(logits, 0), gt, kDiceSmooth); }, {&logits},
            1e-3);
        CHECK(err < 1e-5);
    }
}
