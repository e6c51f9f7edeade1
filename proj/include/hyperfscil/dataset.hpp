#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace hyperfscil {

using ClassId = std::size_t;

enum class Split { train, test };

struct Sample {
    std::vector<double> features;
    ClassId label = 0;
    Split split = Split::train;

    bool operator==(const Sample&) const = default;
};

// Pre-extracted feature vectors with contiguous class ids 0..class_count-1.
class FeatureDataset {
public:
    FeatureDataset() = default;
    FeatureDataset(std::size_t dim, std::vector<Sample> samples);

    std::size_t dim() const noexcept { return dim_; }
    std::size_t class_count() const noexcept { return class_count_; }
    const std::vector<Sample>& samples() const noexcept { return samples_; }

    // Indices of samples with the given label and split, in dataset order.
    std::vector<std::size_t> indices_of(ClassId label, Split split) const;

    bool operator==(const FeatureDataset&) const = default;

private:
    std::size_t dim_ = 0;
    std::size_t class_count_ = 0;
    std::vector<Sample> samples_;
};

struct SyntheticSpec {
    std::size_t classes = 10;
    std::size_t train_per_class = 40;
    std::size_t test_per_class = 20;
    std::size_t dim = 8;
    double separation = 8.0;
    std::uint64_t seed = 0;

    bool operator==(const SyntheticSpec&) const = default;
};

// Isotropic unit-variance Gaussian blobs whose means are pairwise at least `separation` apart.
// Samples are ordered by class, train before test.
FeatureDataset generate_synthetic(const SyntheticSpec& spec);

// Per-feature z-scoring with statistics from a reference subset. Constant features keep scale 1.
struct FeatureScaler {
    std::vector<double> mean;
    std::vector<double> scale;

    static FeatureScaler fit(const FeatureDataset& data, std::span<const std::size_t> indices);
    std::vector<double> apply(std::span<const double> x) const;
    FeatureDataset apply(const FeatureDataset& data) const;
};

// Header `split,class,f0,...,f{d-1}`, one sample per LF-terminated line.
FeatureDataset load_csv_dataset(const std::filesystem::path& path);
FeatureDataset parse_csv_dataset(const std::string& text);
std::string format_csv_dataset(const FeatureDataset& data);
void save_csv_dataset(const FeatureDataset& data, const std::filesystem::path& path);

// Locale-independent shortest round-trip decimal form.
std::string format_double(double v);
// Locale-independent fixed notation with the given number of decimals.
std::string format_fixed(double v, int decimals);

// Writes to a sibling temporary file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

} // namespace hyperfscil
