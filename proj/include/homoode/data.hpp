#pragma once

#include <cstdint>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "homoode/model.hpp"
#include "homoode/shared_init.hpp"
#include "homoode/tensor.hpp"

namespace homoode {

struct Dataset {
    Tensor images;  // [n,c,h,w] for image data, [n,f] for point sets
    std::vector<int> labels;
    std::string split;
    int num_classes = 10;

    std::int64_t size() const { return images.dim(0); }
    // Copies rows `from..to` (exclusive) in index order.
    Dataset slice(std::int64_t from, std::int64_t to) const;
    // Copies the given rows.
    Dataset gather(const std::vector<std::int64_t>& idx) const;
};

struct MetricRow {
    int epoch = 0;
    std::string split;
    double accuracy = 0.0;
    double mean_nfe = 0.0;
    double loss = 0.0;
    double wall_time_s = 0.0;
};

struct MetricLog {
    std::vector<MetricRow> rows;
    std::int64_t skipped_batches = 0;

    void append(MetricRow r);
    // CSV per the external contract: header epoch,split,accuracy,mean_nfe,
    // loss,wall_time_s. A non-empty comment becomes the first line.
    void write_csv(std::ostream& os, const std::string& comment = "") const;
};

// ---- IDX files ----

struct IdxImages {
    std::int64_t n = 0, h = 0, w = 0;
    std::vector<std::uint8_t> pixels;  // row-major per image
};

IdxImages read_idx_images(const std::string& path);
std::vector<std::uint8_t> read_idx_labels(const std::string& path);
void write_idx_images(const std::string& path, const IdxImages& im);
void write_idx_labels(const std::string& path, const std::vector<std::uint8_t>& labels);

// Loads an image/label IDX pair, scales pixels to [0,1] and standardizes
// with the conventional MNIST constants (mean 0.1307, std 0.3081).
Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path,
                       const std::string& split = "train");

// ---- synthetic 2-D problems ----

Dataset synth_circles(std::int64_t n, double noise, std::uint64_t seed);
Dataset synth_moons(std::int64_t n, double noise, std::uint64_t seed);

// ---- augmentation ----

// Zero-pad by `pad`, random-crop back to the original size, optional
// horizontal flip with p = 0.5. Labels are untouched by design.
Tensor augment(const Tensor& images, int pad, bool flip, std::mt19937_64& rng);

// ---- training ----

struct TrainOptions {
    int epochs = 10;
    int batch_size = 64;
    double lr = 1e-3;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    double dropout_rate = 0.0;
    std::uint64_t seed = 0;
    bool use_adjoint = false;
    bool eval_each_epoch = true;
    bool verbose = false;
};

struct EvalResult {
    double accuracy = 0.0;
    double mean_nfe = 0.0;
    double loss = 0.0;
};

EvalResult evaluate(const ImplicitModel& m, const Dataset& data, int batch_size,
                    const SharedInit* si = nullptr);

// Adam on the model parameters (the shared init, when present, follows its
// own SGD schedule and never enters the Adam state).
class AdamOptimizer {
public:
    AdamOptimizer(std::vector<std::pair<std::string, Tensor>>& params, double lr, double beta1,
                  double beta2, double eps);
    void step();
    void zero_grad();

private:
    std::vector<std::pair<std::string, Tensor>>* params_;
    double lr_, b1_, b2_, eps_;
    std::int64_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

MetricLog train_loop(ImplicitModel& m, const Dataset& train, const Dataset& test,
                     const TrainOptions& opt, SharedInit* si = nullptr);

// Deterministic named sub-stream of a master seed.
std::mt19937_64 seed_stream(std::uint64_t seed, const std::string& name);

}  // namespace homoode
