#include "hyperfscil/dataset.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <system_error>

#include "hyperfscil/errors.hpp"

namespace hyperfscil {

FeatureDataset::FeatureDataset(std::size_t dim, std::vector<Sample> samples) : dim_(dim), samples_(std::move(samples)) {
    if (dim_ == 0) throw DatasetError("feature dimension must be >= 1");
    std::size_t max_label = 0;
    std::vector<char> seen;
    for (std::size_t i = 0; i < samples_.size(); ++i) {
        const auto& s = samples_[i];
        if (s.features.size() != dim_)
            throw DatasetError("sample " + std::to_string(i) + " has " + std::to_string(s.features.size()) +
                               " features, expected " + std::to_string(dim_));
        for (double f : s.features)
            if (!std::isfinite(f)) throw DatasetError("sample " + std::to_string(i) + " has a non-finite feature");
        if (s.label >= seen.size()) seen.resize(s.label + 1, 0);
        seen[s.label] = 1;
        max_label = std::max(max_label, s.label);
    }
    for (std::size_t c = 0; c < seen.size(); ++c)
        if (!seen[c]) throw DatasetError("class ids are not contiguous: class " + std::to_string(c) + " is missing");
    class_count_ = samples_.empty() ? 0 : max_label + 1;
}

std::vector<std::size_t> FeatureDataset::indices_of(ClassId label, Split split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < samples_.size(); ++i)
        if (samples_[i].label == label && samples_[i].split == split) out.push_back(i);
    return out;
}

FeatureDataset generate_synthetic(const SyntheticSpec& spec) {
    if (spec.classes == 0 || spec.train_per_class == 0 || spec.test_per_class == 0 || spec.dim == 0)
        throw DatasetError("synthetic dataset counts must be >= 1");
    if (!(spec.separation >= 0.0)) throw DatasetError("separation must be >= 0");

    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> unit(0.0, 1.0);

    // Means are drawn from N(0, spread^2 I) and rejected until pairwise far enough; the spread
    // widens whenever a placement keeps failing. Two such draws sit about spread * sqrt(2 dim)
    // apart, so the initial spread targets 1.2x the separation.
    double spread = 1.2 * std::max(spec.separation, 1.0) / std::sqrt(2.0 * static_cast<double>(spec.dim));
    std::vector<std::vector<double>> means;
    int failures = 0;
    while (means.size() < spec.classes) {
        std::vector<double> m(spec.dim);
        for (auto& x : m) x = spread * unit(rng);
        const bool ok = std::all_of(means.begin(), means.end(), [&](const auto& other) {
            double sq = 0.0;
            for (std::size_t i = 0; i < spec.dim; ++i) sq += (m[i] - other[i]) * (m[i] - other[i]);
            return std::sqrt(sq) >= spec.separation;
        });
        if (ok) {
            means.push_back(std::move(m));
            failures = 0;
        } else if (++failures > 1000) {
            spread *= 1.1;
            failures = 0;
        }
    }

    std::vector<Sample> samples;
    samples.reserve(spec.classes * (spec.train_per_class + spec.test_per_class));
    for (ClassId c = 0; c < spec.classes; ++c) {
        for (std::size_t n = 0; n < spec.train_per_class + spec.test_per_class; ++n) {
            Sample s;
            s.label = c;
            s.split = n < spec.train_per_class ? Split::train : Split::test;
            s.features.resize(spec.dim);
            for (std::size_t i = 0; i < spec.dim; ++i) s.features[i] = means[c][i] + unit(rng);
            samples.push_back(std::move(s));
        }
    }
    return FeatureDataset(spec.dim, std::move(samples));
}

FeatureScaler FeatureScaler::fit(const FeatureDataset& data, std::span<const std::size_t> indices) {
    if (indices.empty()) throw ContractError("FeatureScaler::fit: no reference samples");
    const std::size_t d = data.dim();
    FeatureScaler out{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
    for (auto i : indices) {
        const auto& f = data.samples().at(i).features;
        for (std::size_t j = 0; j < d; ++j) out.mean[j] += f[j];
    }
    const double n = static_cast<double>(indices.size());
    for (auto& m : out.mean) m /= n;
    for (auto i : indices) {
        const auto& f = data.samples()[i].features;
        for (std::size_t j = 0; j < d; ++j) out.scale[j] += (f[j] - out.mean[j]) * (f[j] - out.mean[j]);
    }
    for (auto& s : out.scale) {
        s = std::sqrt(s / n);
        if (!(s > 1e-12)) s = 1.0;
    }
    return out;
}

std::vector<double> FeatureScaler::apply(std::span<const double> x) const {
    if (x.size() != mean.size())
        throw ShapeError("FeatureScaler: expected " + std::to_string(mean.size()) + " features, got " +
                         std::to_string(x.size()));
    std::vector<double> out(x.size());
    for (std::size_t j = 0; j < x.size(); ++j) out[j] = (x[j] - mean[j]) / scale[j];
    return out;
}

FeatureDataset FeatureScaler::apply(const FeatureDataset& data) const {
    auto samples = data.samples();
    for (auto& s : samples) s.features = apply(s.features);
    return FeatureDataset(data.dim(), std::move(samples));
}

std::string format_double(double v) {
    std::array<char, 64> buf{};
    auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    if (ec != std::errc()) throw InvalidInputError("cannot format value");
    return std::string(buf.data(), ptr);
}

std::string format_fixed(double v, int decimals) {
    std::array<char, 128> buf{};
    auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v, std::chars_format::fixed, decimals);
    if (ec != std::errc()) throw InvalidInputError("cannot format value");
    std::string s(buf.data(), ptr);
    if (s.starts_with("-") && s.find_first_not_of("-0.") == std::string::npos) s.erase(0, 1);
    return s;
}

namespace {

std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        auto pos = line.find(',', start);
        out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

bool parse_number(std::string_view s, double& out) {
    if (s.empty()) return false;
    const char* first = s.data();
    if (*first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), out);
    return ec == std::errc() && ptr == s.data() + s.size() && std::isfinite(out);
}

bool parse_natural(std::string_view s, std::size_t& out) {
    if (s.empty()) return false;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc() && ptr == s.data() + s.size();
}

} // namespace

FeatureDataset parse_csv_dataset(const std::string& text) {
    std::vector<std::string_view> lines;
    {
        std::string_view rest(text);
        while (!rest.empty()) {
            auto pos = rest.find('\n');
            lines.push_back(rest.substr(0, pos));
            if (pos == std::string_view::npos) break;
            rest.remove_prefix(pos + 1);
        }
    }
    if (lines.empty()) throw DatasetParseError(1, "missing header");

    auto strip_cr = [](std::string_view l) {
        if (!l.empty() && l.back() == '\r') l.remove_suffix(1);
        return l;
    };

    const auto header = split_commas(strip_cr(lines[0]));
    if (header.size() < 3 || header[0] != "split" || header[1] != "class")
        throw DatasetParseError(1, "header must be 'split,class,f0,...'");
    const std::size_t dim = header.size() - 2;
    for (std::size_t i = 0; i < dim; ++i)
        if (header[i + 2] != "f" + std::to_string(i))
            throw DatasetParseError(1, "header column " + std::to_string(i + 2) + " must be 'f" + std::to_string(i) + "'");

    std::vector<Sample> samples;
    std::map<ClassId, std::size_t> first_line_of;
    for (std::size_t ln = 1; ln < lines.size(); ++ln) {
        const auto line = strip_cr(lines[ln]);
        const std::size_t line_no = ln + 1;
        if (line.empty()) continue;
        const auto cells = split_commas(line);
        if (cells.size() != dim + 2)
            throw RaggedRowError(line_no, "expected " + std::to_string(dim) + " features, found " +
                                              std::to_string(cells.size() >= 2 ? cells.size() - 2 : 0));
        Sample s;
        if (cells[0] == "train") s.split = Split::train;
        else if (cells[0] == "test") s.split = Split::test;
        else throw DatasetParseError(line_no, "split must be 'train' or 'test'");
        if (!parse_natural(cells[1], s.label)) throw ClassIdError(line_no, "class must be a natural number");
        s.features.resize(dim);
        for (std::size_t i = 0; i < dim; ++i)
            if (!parse_number(cells[i + 2], s.features[i]))
                throw NonNumericFeatureError(line_no, "feature f" + std::to_string(i) + " is not a finite number");
        first_line_of.try_emplace(s.label, line_no);
        samples.push_back(std::move(s));
    }

    // Contiguity: ids must be exactly 0..k-1. Blame the first row of the first id past a gap.
    ClassId expected = 0;
    for (const auto& [id, line_no] : first_line_of) {
        if (id != expected)
            throw ClassIdError(line_no, "class ids are not contiguous: class " + std::to_string(expected) +
                                            " is missing before class " + std::to_string(id));
        ++expected;
    }
    return FeatureDataset(dim, std::move(samples));
}

FeatureDataset load_csv_dataset(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open dataset '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_csv_dataset(ss.str());
}

std::string format_csv_dataset(const FeatureDataset& data) {
    std::string out = "split,class";
    for (std::size_t i = 0; i < data.dim(); ++i) out += ",f" + std::to_string(i);
    out += '\n';
    for (const auto& s : data.samples()) {
        out += s.split == Split::train ? "train" : "test";
        out += ',';
        out += std::to_string(s.label);
        for (double f : s.features) {
            out += ',';
            out += format_double(f);
        }
        out += '\n';
    }
    return out;
}

void save_csv_dataset(const FeatureDataset& data, const std::filesystem::path& path) {
    write_file_atomic(path, format_csv_dataset(data));
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write '" + tmp.string() + "'");
        out << contents;
        out.flush();
        if (!out) throw IoError("failed writing '" + tmp.string() + "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw IoError("cannot replace '" + path.string() + "'");
    }
}

} // namespace hyperfscil
