#pragma once

#include <Eigen/Core>

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "skdan/error.hpp"

namespace skdan {

// Number of points every charge segment is resampled to.
constexpr int kSegmentLength = 160;

enum class Phase { charge_cc, charge_cv, discharge, rest };

struct CycleSample {
    double time_s = 0.0;
    double voltage_v = 0.0;
    double current_a = 0.0;
};

// One full cycle from a cycling log. The constant-current charge phase is the
// half-open sample range [cc_begin, cc_end); its current stays within 5% of
// the phase median.
struct CycleRecord {
    long cycle_index = 0;
    std::vector<CycleSample> samples;
    std::vector<Phase> phases;
    std::size_t cc_begin = 0;
    std::size_t cc_end = 0;

    bool has_cc_phase() const { return cc_end > cc_begin + 1; }
};

// Expected CSV layout for cycling logs; column positions are resolved from
// the header row, extra columns are ignored.
struct CyclingCsvSchema {
    std::string cycle_column = "cycle_index";
    std::string time_column = "time_s";
    std::string voltage_column = "voltage_V";
    std::string current_column = "current_A";
};

// Piece of a CC charge curve cut by an SOC window, before resampling.
// charge_ah is cumulative charge since the CC-phase start.
struct RawSegment {
    std::vector<double> time_s;
    std::vector<double> voltage_v;
    std::vector<double> charge_ah;
    double soc_start = 0.0;
    double soc_end = 0.0;
    long cycle_index = 0;
};

// Voltage/charge resampled onto the uniform 160-point grid.
struct ResampledSegment {
    Eigen::VectorXd voltage;  // 160
    Eigen::VectorXd charge;   // 160, cumulative Ah
    double soc_start = 0.0;
    double soc_end = 0.0;
    long cycle_index = 0;
};

// One model input sample: the four aligned 160-point channels.
struct ChargeSegment {
    Eigen::VectorXd v;   // volts
    Eigen::VectorXd dv;  // v - v[0]
    Eigen::VectorXd dq;  // cumulative Ah since segment start
    Eigen::VectorXd ic;  // incremental capacity, Ah/V
    double soc_start = 0.0;
    double soc_end = 0.0;
    long cycle_index = 0;
    std::optional<double> soh_label;
};

struct NormStats {
    double min = 0.0;
    double max = 1.0;
    bool constant = false;  // channel had max == min; scaled to all-zeros
};

// Mirrors the companion metadata JSON for a battery/domain.
struct DomainMeta {
    double nominal_capacity_ah = 1.0;
    double voltage_min = 0.0;
    double voltage_max = 1.0;
    double soc_start = 0.0;   // percent
    double soc_end = 100.0;   // percent
    double temperature_c = 25.0;
    double discharge_rate_c = 1.0;
    std::string dataset_name;
};

struct DomainDataset {
    std::vector<ChargeSegment> samples;
    bool labeled = false;
    bool normalized = false;
    std::array<NormStats, 4> stats{};  // v, dv, dq, ic
    DomainMeta meta;
    std::vector<std::string> warnings;

    std::size_t size() const { return samples.size(); }
};

// --- ingestion ------------------------------------------------------------

std::vector<CycleRecord> parse_cycling_csv(const std::string& path,
                                           const CyclingCsvSchema& schema = {});

DomainMeta load_domain_meta(const std::string& path);

// cycle_index -> calibrated capacity in Ah.
std::map<long, double> load_labels_csv(const std::string& path);

// --- segmentation and features ---------------------------------------------

// Splits the CC charge phase into SOC windows of width window_dod percent,
// advanced by step percent. Window positions are anchored at the cycle's SOC
// range start; a window wider than the cycle span yields no segments.
std::vector<RawSegment> segment_cycles(const CycleRecord& record, double window_dod, double step,
                                       const DomainMeta& meta);

// Linear interpolation of voltage and cumulative charge onto a uniform
// 160-point grid in normalized time; endpoints are preserved exactly.
ResampledSegment resample_segment(const RawSegment& raw);

// Builds the four channels; smooth_ic applies a centered width-5 moving
// average to the IC channel.
ChargeSegment compute_features(const ResampledSegment& seg, bool smooth_ic = false);

// Per-channel min-max normalization with statistics computed over the whole
// domain. A constant channel is scaled to all-zeros and flagged.
DomainDataset normalize_domain(DomainDataset dataset);

// Undoes normalize_domain using the stored statistics.
ChargeSegment denormalize_segment(const ChargeSegment& seg, const std::array<NormStats, 4>& stats);

// Scales an un-normalized dataset with foreign statistics (e.g. target test
// batteries normalized by adaptation-set statistics). Values may leave [0,1]
// when the foreign range does not cover the data.
DomainDataset apply_normalization(DomainDataset dataset, const std::array<NormStats, 4>& stats);

// Full ingestion for one domain: parse every battery CSV, segment, resample,
// build features, attach labels (SOH = calibrated capacity / nominal), and
// normalize. Batteries are processed in the given order; labels_paths is
// either empty (unlabeled domain) or aligned with csv_paths.
struct DomainBuildOptions {
    double window_dod = 60.0;
    double step = 10.0;
    bool smooth_ic = false;
    bool normalize = true;
};

DomainDataset build_domain(const std::vector<std::string>& csv_paths,
                           const std::vector<std::string>& labels_paths, const DomainMeta& meta,
                           const DomainBuildOptions& options);

// --- kernel density estimation ----------------------------------------------

// Gaussian KDE evaluated on a grid. Bandwidth must be positive.
std::vector<double> kde_density(const std::vector<double>& values, const std::vector<double>& grid,
                                double bandwidth);

// Silverman's rule-of-thumb bandwidth.
double silverman_bandwidth(const std::vector<double>& values);

// Uniform grid covering [min - 4h, max + 4h].
std::vector<double> make_kde_grid(const std::vector<double>& values, double bandwidth,
                                  int n_points = 512);

void write_kde_csv(const std::string& path, const std::vector<double>& grid,
                   const std::vector<double>& density);

// --- serialization -----------------------------------------------------------

void save_dataset(const DomainDataset& dataset, const std::string& path);
DomainDataset load_dataset(const std::string& path);

}  // namespace skdan
