#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "helpers.hpp"
#include "homoode/checkpoint.hpp"
#include "homoode/config.hpp"
#include "homoode/data.hpp"

using namespace homoode;

namespace {

std::string data_path(const char* file) {
    return std::string(HOMOODE_DATA_DIR) + "/" + file;
}

std::string temp_file(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("idx round trip is bit-identical") {
    IdxImages im;
    im.n = 3;
    im.h = 4;
    im.w = 5;
    std::mt19937_64 rng(1);
    im.pixels.resize(60);
    for (auto& p : im.pixels) p = static_cast<std::uint8_t>(rng());
    const std::string ipath = temp_file("rt-images-idx3-ubyte");
    const std::string lpath = temp_file("rt-labels-idx1-ubyte");
    write_idx_images(ipath, im);
    std::vector<std::uint8_t> labels{7, 0, 3};
    write_idx_labels(lpath, labels);

    IdxImages back = read_idx_images(ipath);
    CHECK(back.n == 3);
    CHECK(back.h == 4);
    CHECK(back.w == 5);
    CHECK(back.pixels == im.pixels);
    CHECK(read_idx_labels(lpath) == labels);

    Dataset a = load_mnist_idx(ipath, lpath, "x");
    Dataset b = load_mnist_idx(ipath, lpath, "x");
    CHECK(a.images.value() == b.images.value());
    CHECK(a.labels == std::vector<int>{7, 0, 3});
    std::remove(ipath.c_str());
    std::remove(lpath.c_str());
}

TEST_CASE("idx error contracts: bad magic and truncation") {
    const std::string path = temp_file("bad-idx");
    {
        std::ofstream f(path, std::ios::binary);
        const char junk[8] = {0, 0, 9, 9, 0, 0, 0, 1};
        f.write(junk, 8);
    }
    CHECK_THROWS_AS(read_idx_images(path), FormatError);
    CHECK_THROWS_AS(read_idx_labels(path), FormatError);
    {
        std::ofstream f(path, std::ios::binary);
        const unsigned char hdr[] = {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 4, 0, 0, 0, 4, 1, 2};
        f.write(reinterpret_cast<const char*>(hdr), sizeof(hdr));  // claims 2x4x4, has 2 bytes
    }
    CHECK_THROWS_AS(read_idx_images(path), IoError);
    CHECK_THROWS_AS(read_idx_images(temp_file("does-not-exist")), IoError);
    std::remove(path.c_str());
}

TEST_CASE("bundled digit data: shapes, standardization, label balance") {
    Dataset train = load_mnist_idx(data_path("train-images-idx3-ubyte"),
                                   data_path("train-labels-idx1-ubyte"), "train");
    Dataset test = load_mnist_idx(data_path("t2k-images-idx3-ubyte"),
                                  data_path("t2k-labels-idx1-ubyte"), "test");
    CHECK(train.images.shape() == Shape{8000, 1, 28, 28});
    CHECK(test.images.shape() == Shape{2000, 1, 28, 28});
    CHECK(train.images.all_finite());
    // a zero pixel maps to the standardized floor, a full pixel to the ceiling
    const double lo = (0.0 - 0.1307) / 0.3081, hi = (1.0 - 0.1307) / 0.3081;
    for (size_t i = 0; i < 28 * 28; ++i) {
        CHECK(train.images.value()[i] >= lo - 1e-12);
        CHECK(train.images.value()[i] <= hi + 1e-12);
    }
    // every class appears a sane number of times in the test split
    std::vector<int> counts(10, 0);
    for (int l : test.labels) {
        REQUIRE(l >= 0);
        REQUIRE(l <= 9);
        ++counts[static_cast<size_t>(l)];
    }
    for (int c : counts) {
        CHECK(c > 100);
        CHECK(c < 350);
    }
}

TEST_CASE("dataset slice and gather") {
    Dataset d = synth_circles(16, 0.0, 1);
    Dataset s = d.slice(4, 8);
    CHECK(s.size() == 4);
    for (int i = 0; i < 4; ++i) {
        CHECK(s.images.at(2 * i) == d.images.at(2 * (i + 4)));
        CHECK(s.labels[static_cast<size_t>(i)] == d.labels[static_cast<size_t>(i + 4)]);
    }
    CHECK_THROWS_AS(d.gather({99}), DimensionError);
}

TEST_CASE("synth_circles: exact radii at zero noise, deterministic, separable") {
    Dataset a = synth_circles(200, 0.0, 42);
    Dataset b = synth_circles(200, 0.0, 42);
    CHECK(a.images.value() == b.images.value());
    CHECK(a.labels == b.labels);
    Dataset c = synth_circles(200, 0.0, 43);
    CHECK(a.images.value() != c.images.value());

    int inner = 0;
    for (std::int64_t i = 0; i < 200; ++i) {
        const double x = a.images.at(2 * i), y = a.images.at(2 * i + 1);
        const double r = std::sqrt(x * x + y * y);
        const int want = a.labels[static_cast<size_t>(i)];
        CHECK(r == doctest::Approx(want == 0 ? 0.5 : 1.0).epsilon(1e-12));
        // the radius-threshold classifier is perfect at zero noise
        CHECK((r < 0.75 ? 0 : 1) == want);
        inner += want == 0;
    }
    CHECK(inner == 100);
    CHECK_THROWS_AS(synth_circles(7, 0.0, 1), ParameterError);
}

TEST_CASE("synth_moons: balanced, deterministic, within the expected box") {
    Dataset a = synth_moons(300, 0.0, 7);
    Dataset b = synth_moons(300, 0.0, 7);
    CHECK(a.images.value() == b.images.value());
    int c0 = 0;
    for (std::int64_t i = 0; i < 300; ++i) {
        c0 += a.labels[static_cast<size_t>(i)] == 0;
        CHECK(std::abs(a.images.at(2 * i)) <= 2.0 + 1e-9);
        CHECK(std::abs(a.images.at(2 * i + 1)) <= 1.5 + 1e-9);
    }
    CHECK(c0 == 150);
}

TEST_CASE("augment: identity, involution, crop uniformity, no label contact") {
    std::mt19937_64 rng(3);
    Tensor imgs = testutil::randt({4, 1, 6, 6}, rng, 1.0, false);
    Tensor same = augment(imgs, 0, false, rng);
    CHECK(same.value() == imgs.value());

    // flip is an involution: find a flipped row and flip it back by hand
    Tensor one = testutil::randt({1, 1, 1, 6}, rng, 1.0, false);
    bool saw_flip = false, saw_plain = false;
    for (int rep = 0; rep < 64 && !(saw_flip && saw_plain); ++rep) {
        Tensor f = augment(one, 0, true, rng);
        if (f.value() == one.value()) {
            saw_plain = true;
        } else {
            std::vector<double> re(f.value().rbegin(), f.value().rend());
            CHECK(re == one.value());
            saw_flip = true;
        }
    }
    CHECK(saw_flip);
    CHECK(saw_plain);

    // crop offsets uniform over (2 pad + 1)^2 positions: delta image with a
    // single hot pixel tracks where the crop landed
    const int pad = 1;
    Tensor probe = Tensor::zeros({1, 1, 5, 5});
    probe.value()[2 * 5 + 2] = 1.0;  // center pixel
    std::vector<int> hist(9, 0);
    const int draws = 10000;
    for (int rep = 0; rep < draws; ++rep) {
        Tensor crop = augment(probe, pad, false, rng);
        int pos = -1;
        for (int i = 0; i < 25; ++i)
            if (crop.value()[static_cast<size_t>(i)] == 1.0) pos = i;
        REQUIRE(pos >= 0);
        const int y = pos / 5, x = pos % 5;
        hist[static_cast<size_t>((y - 1) * 3 + (x - 1))]++;
    }
    // chi-squared against uniform: 8 dof, p > 0.01 means stat < 20.09
    double stat = 0.0;
    const double expect = draws / 9.0;
    for (int h : hist) stat += (h - expect) * (h - expect) / expect;
    CHECK(stat < 20.09);
}

TEST_CASE("seed_stream: named sub-streams differ and reproduce") {
    auto a1 = seed_stream(5, "data");
    auto a2 = seed_stream(5, "data");
    auto b = seed_stream(5, "dropout");
    CHECK(a1() == a2());
    auto a3 = seed_stream(5, "data");
    CHECK(a3() != b());
}

TEST_CASE("train_loop: zero epochs leaves the model untouched") {
    ModelConfig mc;
    mc.kind = ModelKind::homo_ode;
    mc.arch = ArchKind::mlp;
    mc.in_features = 2;
    mc.channels = 4;
    mc.num_classes = 2;
    std::mt19937_64 rng(1);
    ImplicitModel m(mc, rng);
    std::vector<std::vector<double>> before;
    for (auto& [n, p] : m.params()) before.push_back(p.value());
    Dataset d = synth_circles(8, 0.05, 1);
    TrainOptions opt;
    opt.epochs = 0;
    MetricLog log = train_loop(m, d, d, opt);
    CHECK(log.rows.empty());
    size_t i = 0;
    for (auto& [n, p] : m.params()) CHECK(p.value() == before[i++]);
}

TEST_CASE("train_loop: memorizes a 16-sample set and is seed-deterministic") {
    auto run = [](std::uint64_t model_seed) {
        ModelConfig mc;
        mc.kind = ModelKind::homo_ode;
        mc.arch = ArchKind::mlp;
        mc.in_features = 2;
        mc.channels = 8;
        mc.num_classes = 2;
        mc.solver.atol = mc.solver.rtol = 1e-3;
        std::mt19937_64 rng(model_seed);
        ImplicitModel m(mc, rng);
        Dataset d = synth_circles(16, 0.05, 3);
        TrainOptions opt;
        opt.epochs = 400;
        opt.batch_size = 16;
        opt.lr = 5e-3;
        opt.seed = 9;
        opt.eval_each_epoch = false;
        return train_loop(m, d, d, opt);
    };
    MetricLog a = run(4);
    REQUIRE(!a.rows.empty());
    CHECK(a.rows.back().loss < 0.05);
    CHECK(a.skipped_batches == 0);

    MetricLog b = run(4);
    REQUIRE(a.rows.size() == b.rows.size());
    for (size_t i = 0; i < a.rows.size(); ++i) {
        CHECK(a.rows[i].loss == b.rows[i].loss);
        CHECK(a.rows[i].accuracy == b.rows[i].accuracy);
        CHECK(a.rows[i].mean_nfe == b.rows[i].mean_nfe);
    }
}

TEST_CASE("MetricLog: monotone epochs and the CSV contract") {
    MetricLog log;
    log.append({1, "train", 0.5, 10.0, 1.2, 3.0});
    log.append({1, "test", 0.4, 12.0, 1.4, 4.0});
    log.append({2, "train", 0.6, 11.0, 1.0, 7.0});
    CHECK_THROWS_AS(log.append({1, "train", 0.0, 0.0, 0.0, 0.0}), ParameterError);
    std::ostringstream os;
    log.write_csv(os, "config deadbeef");
    std::istringstream is(os.str());
    std::string line;
    std::getline(is, line);
    CHECK(line == "# config deadbeef");
    std::getline(is, line);
    CHECK(line == "epoch,split,accuracy,mean_nfe,loss,wall_time_s");
    std::getline(is, line);
    CHECK(line.rfind("1,train,0.5,", 0) == 0);
}

TEST_CASE("config: parse, resolve, hash, unknown keys") {
    RunConfig cfg = parse_config_text(
        "# a comment\n"
        "model.kind = deq\n"
        "solver.atol = 1e-5\n"
        "\n"
        "experiment.epochs = 3\n");
    CHECK(cfg.model_kind == "deq");
    CHECK(cfg.atol == 1e-5);
    CHECK(cfg.epochs == 3);
    CHECK_THROWS_AS(parse_config_text("model.bogus = 1\n"), ConfigError);
    CHECK_THROWS_AS(config_apply(cfg, "solver.atol", "not-a-number"), ConfigError);

    const std::string resolved = resolved_config_text(cfg);
    CHECK(resolved.find("model.kind = deq") != std::string::npos);
    CHECK(config_hash(cfg) == config_hash(cfg));
    RunConfig other = cfg;
    other.epochs = 4;
    CHECK(config_hash(cfg) != config_hash(other));
}

TEST_CASE("config: dataset drives the derived model configuration") {
    RunConfig cfg;
    cfg.dataset = "mnist";
    ModelConfig mc = to_model_config(cfg);
    CHECK(mc.arch == ArchKind::conv);
    CHECK(mc.image_hw == 28);
    CHECK(mc.num_classes == 10);
    cfg.dataset = "circles";
    ModelConfig ms = to_model_config(cfg);
    CHECK(ms.arch == ArchKind::mlp);
    CHECK(ms.in_features == 2);
    CHECK(ms.num_classes == 2);
}

TEST_CASE("checkpoint: tensor container round trip and error contracts") {
    std::mt19937_64 rng(11);
    std::vector<std::pair<std::string, Tensor>> tensors{
        {"a", testutil::randt({2, 3}, rng, 1.0, false)},
        {"nested.name.b", testutil::randt({4}, rng, 1.0, false)},
    };
    const std::string path = temp_file("roundtrip.bin");
    save_checkpoint(path, tensors);
    auto back = load_checkpoint(path);
    REQUIRE(back.size() == 2);
    CHECK(back[0].first == "a");
    CHECK(back[0].second.shape() == Shape{2, 3});
    CHECK(back[0].second.value() == tensors[0].second.value());
    CHECK(checkpoint_has(back, "nested.name.b"));
    CHECK(checkpoint_get(back, "nested.name.b").value() == tensors[1].second.value());

    {
        std::ofstream f(path, std::ios::binary);
        f << "NOPE";
    }
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);
    {
        std::ofstream f(path, std::ios::binary);
        f.write(kCheckpointMagic, 4);  // magic only, then EOF
    }
    CHECK_THROWS_AS(load_checkpoint(path), IoError);
    std::remove(path.c_str());
}

TEST_CASE("checkpoint: whole model with shared init round-trips") {
    ModelConfig mc;
    mc.kind = ModelKind::homo_ode;
    mc.arch = ArchKind::mlp;
    mc.in_features = 2;
    mc.channels = 4;
    mc.num_classes = 2;
    std::mt19937_64 rng(13);
    ImplicitModel m(mc, rng);
    SharedInit si = make_shared_init(4, 0.05, 10);
    si.z_tilde.value() = {0.1, -0.2, 0.3, -0.4};

    const std::string path = temp_file("model.bin");
    save_model_checkpoint(path, m, &si);
    LoadedModel back = load_model_checkpoint(path);
    CHECK(back.model.config().kind == ModelKind::homo_ode);
    CHECK(back.model.config().arch == ArchKind::mlp);
    CHECK(back.model.config().channels == 4);
    for (auto& [name, p] : m.params()) CHECK(back.model.param(name).value() == p.value());
    REQUIRE(back.has_shared_init);
    CHECK(back.shared_init.z_tilde.value() == si.z_tilde.value());
    CHECK(back.shared_init.lr_init == si.lr_init);
    CHECK(back.shared_init.update_every == si.update_every);

    // identical forwards after reload
    Dataset d = synth_circles(8, 0.05, 1);
    auto a = m.forward(d.images);
    auto b = back.model.forward(d.images);
    CHECK(a.z_final.value() == b.z_final.value());
    std::remove(path.c_str());
}

TEST_CASE("evaluate: nfe logging is the mean of per-forward counters") {
    ModelConfig mc;
    mc.kind = ModelKind::homo_ode;
    mc.arch = ArchKind::mlp;
    mc.in_features = 2;
    mc.channels = 4;
    mc.num_classes = 2;
    std::mt19937_64 rng(17);
    ImplicitModel m(mc, rng);
    Dataset d = synth_circles(12, 0.05, 2);
    EvalResult ev = evaluate(m, d, 4);
    double nfe_sum = 0.0;
    for (std::int64_t b = 0; b < 12; b += 4) {
        auto rec = m.forward(d.slice(b, b + 4).images);
        nfe_sum += static_cast<double>(rec.nfe);
    }
    CHECK(ev.mean_nfe == doctest::Approx(nfe_sum / 3.0).epsilon(1e-12));
    CHECK(ev.accuracy >= 0.0);
    CHECK(ev.accuracy <= 1.0);
}
