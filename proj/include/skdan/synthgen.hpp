#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "skdan/datapipe.hpp"
#include "skdan/rng.hpp"

namespace skdan {

// Desk-scale stand-in for cycled-battery corpora: a logistic OCV-like charge
// curve whose usable capacity shrinks and whose resistance grows as the cell
// fades by SOH(c) = 1 - a * c^b.
struct SynthSpec {
    int n_cycles = 200;
    double soc_start = 0.0;  // percent
    double soc_end = 100.0;  // percent
    double fade_a = 3e-4;
    double fade_b = 1.0;
    double noise_std_v = 0.0;            // volts
    double internal_resistance_ohm = 0.02;
    double nominal_capacity_ah = 1.5;
    std::uint64_t seed = 0;
    // Metadata passthrough for the emitted corpus.
    double temperature_c = 25.0;
    double discharge_rate_c = 0.5;
    std::string dataset_name = "synthetic";

    double soc_span() const { return soc_end - soc_start; }

    void validate() const {
        if (n_cycles < 1) throw ConfigError("synth: n_cycles must be >= 1");
        if (fade_a < 0.0 || fade_b <= 0.0)
            throw ConfigError("synth: fade law needs a >= 0 and b > 0");
        if (noise_std_v < 0.0) throw ConfigError("synth: noise_std must be >= 0");
        if (internal_resistance_ohm < 0.0) throw ConfigError("synth: resistance must be >= 0");
        if (nominal_capacity_ah <= 0.0) throw ConfigError("synth: nominal capacity must be > 0");
        if (soc_start < 0.0 || soc_end > 100.0 || soc_span() <= 0.0)
            throw ConfigError("synth: soc_window must satisfy 0 <= start < end <= 100");
    }
};

// SOH of the fade law at a cycle; throws when it leaves (0,1] within the
// spec's horizon.
double synth_soh(const SynthSpec& spec, int cycle);

// One battery's cycling log, generated in memory (CC charge followed by a
// short discharge tail per cycle).
std::vector<CycleRecord> synth_cycles(const SynthSpec& spec);

struct SynthDomainResult {
    DomainDataset dataset;
    // True per-sample SOH for unlabeled domains, aligned with dataset.samples
    // (empty for labeled domains, where labels live on the samples).
    std::vector<double> hidden_labels;
};

// Runs the generated cycles through the data pipeline. Labeled domains carry
// exact SOH labels; unlabeled domains return them separately for evaluation.
SynthDomainResult synth_domain(const SynthSpec& spec, bool labeled, double window_dod, double step,
                               bool smooth_ic = false, bool normalize = true);

struct TransferPair {
    DomainDataset source;  // labeled, segmented by the target DOD
    DomainDataset target;  // unlabeled
    std::vector<double> hidden_target_labels;
};

// Source must be full-range; the source is segmented by the target's DOD with
// a 10% step, realizing the transfer setup.
TransferPair synth_transfer_pair(const SynthSpec& source_spec, const SynthSpec& target_spec,
                                 bool smooth_ic = false);

// Concatenates same-role batteries into one (un-normalized) domain.
DomainDataset merge_domains(const std::vector<DomainDataset>& parts);

// Writes one battery as the documented CSV corpus: cycling CSV plus a labels
// CSV (calibrated capacity = SOH * nominal for every cycle).
void write_synth_battery_csv(const SynthSpec& spec, const std::string& cycles_path,
                             const std::string& labels_path);

void write_domain_meta(const SynthSpec& spec, const std::string& path);

}  // namespace skdan
