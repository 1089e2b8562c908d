#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "safemon/core.hpp"

namespace safemon::data {

// Line-delimited dataset records, one episode per line:
//   {"id":..,"scenario":{"names":[..],"values":[..],"lo":[..],"hi":[..],"kind":[..]},
//    "dt":..,"roles":{"lc":[..],"state":[..]},
//    "requirements":[{"name":..,"channel":..,"threshold":..}],
//    "columns":{name:[..], ..}}
// Safety-metric columns are named after their requirement. Reals are written
// with 17 significant digits.

void write_dataset(const std::vector<Episode>& episodes, std::ostream& out);
void write_dataset(const std::vector<Episode>& episodes, const std::string& path);
std::vector<Episode> read_dataset(std::istream& in);
std::vector<Episode> read_dataset(const std::string& path);

/// Parses one record; `line_no` is only used in error messages.
Episode parse_episode(std::string_view line, std::size_t line_no = 1);
std::string format_episode(const Episode& ep);

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL);
/// Hash of the serialized dataset.
std::uint64_t dataset_hash(const std::vector<Episode>& episodes);

enum class Segment { Train, Val, Test };
const char* to_string(Segment s);

struct SplitFractions {
    double train = 0.70;
    double val = 0.10;
    double test = 0.20;

    void validate() const;
};

/// Time-ordered boundaries inside one episode: train = [0, train_end),
/// val = [train_end, val_end), test = [val_end, length).
struct SplitSpec {
    std::size_t train_end = 0;
    std::size_t val_end = 0;
    std::size_t length = 0;

    std::size_t begin(Segment s) const;
    std::size_t end(Segment s) const;
    std::size_t size(Segment s) const { return end(s) - begin(s); }
};

/// Requires T >= 10.
SplitSpec split_episode(const Episode& ep, const SplitFractions& fractions = {});

struct ChannelStats {
    double mean = 0.0;
    double std = 1.0;
};

/// Population mean/std per channel over training timesteps. Channels are the
/// learned-component outputs followed by the safety metrics (by requirement
/// name).
class NormStats {
public:
    static constexpr double kMinStd = 1e-9;

    NormStats() = default;
    NormStats(std::vector<std::string> names, std::vector<ChannelStats> stats);

    const ChannelStats& at(const std::string& name) const;
    double apply(const std::string& name, double x) const;
    double invert(const std::string& name, double z) const;

    const std::vector<std::string>& names() const { return names_; }
    const std::vector<ChannelStats>& stats() const { return stats_; }

    friend bool operator==(const NormStats&, const NormStats&);

private:
    std::vector<std::string> names_;
    std::vector<ChannelStats> stats_;
};

NormStats fit_norm(const std::vector<Episode>& episodes, const std::vector<SplitSpec>& splits);

/// One window per origin t (last lookback index) whose targets t+1..t+h lie
/// inside the segment and whose lookback t-k+1..t lies inside the episode.
/// Lookback may reach back into earlier segments.
std::vector<WindowSample> make_windows(const Episode& ep, const SplitSpec& split, Segment segment,
                                       const WindowConfig& wc, const NormStats& norm,
                                       const std::string& target, int stride = 1);

/// Valid origins for make_windows, in order.
std::vector<long> window_origins(const SplitSpec& split, Segment segment, const WindowConfig& wc,
                                 int stride = 1);

struct SplitWarning {
    std::string episode_id;
    Segment segment = Segment::Train;
    std::string reason;
};

/// Normalization, splits and windows for one target requirement.
struct PreparedData {
    NormStats norm;
    std::vector<SplitSpec> splits;
    std::vector<WindowSample> train;
    std::vector<WindowSample> val;
    std::vector<WindowSample> test;
    std::vector<SplitWarning> warnings;
    std::vector<std::string> covariate_names;
};

struct PrepareOptions {
    SplitFractions fractions{};
    int train_stride = 1;
    int eval_stride = 1;
};

/// Episodes shorter than 10 steps, and episodes whose segment cannot host a
/// single window, are dropped from the affected phase with a warning.
PreparedData prepare(const std::vector<Episode>& episodes, const WindowConfig& wc,
                     const std::string& target, const PrepareOptions& opts = {});

} // namespace safemon::data
