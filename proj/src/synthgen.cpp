#include "skdan/synthgen.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "skdan/io_util.hpp"

namespace skdan {

namespace {

constexpr double kVMin = 2.75;
constexpr double kVMax = 4.2;
constexpr double kChargeRateC = 0.5;
constexpr double kResistanceGrowth = 2.0;  // dR proportional to (1 - SOH)
constexpr int kSamplesPerFullCycle = 480;

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Monotone plateau-shaped open-circuit voltage template over SOC in [0,1].
double ocv(double soc_frac) { return kVMin + (kVMax - kVMin) * logistic(6.0 * (soc_frac - 0.5)); }

}  // namespace

double synth_soh(const SynthSpec& spec, int cycle) {
    const double soh = 1.0 - spec.fade_a * std::pow(static_cast<double>(cycle), spec.fade_b);
    if (soh <= 0.0)
        throw ConfigError("synth: SOH reaches " + fmt_double(soh) + " at cycle " +
                          std::to_string(cycle) + "; fade law leaves (0,1]");
    return soh;
}

std::vector<CycleRecord> synth_cycles(const SynthSpec& spec) {
    spec.validate();
    synth_soh(spec, spec.n_cycles);  // fail fast if the fade law degenerates

    Rng rng(spec.seed);
    const double current_a = kChargeRateC * spec.nominal_capacity_ah;
    // Fixed BMS sampling period, sized on the first (longest) cycle.
    const double full_duration_s =
        3600.0 * (spec.soc_span() / 100.0) * spec.nominal_capacity_ah / current_a;
    const double dt = full_duration_s / kSamplesPerFullCycle;

    std::vector<CycleRecord> cycles;
    cycles.reserve(static_cast<std::size_t>(spec.n_cycles));
    for (int c = 1; c <= spec.n_cycles; ++c) {
        const double soh = synth_soh(spec, c);
        const double capacity = soh * spec.nominal_capacity_ah;
        const double resistance =
            spec.internal_resistance_ohm * (1.0 + kResistanceGrowth * (1.0 - soh));
        const double duration_s = 3600.0 * (spec.soc_span() / 100.0) * capacity / current_a;

        CycleRecord rec;
        rec.cycle_index = c;
        const int n = static_cast<int>(std::floor(duration_s / dt)) + 1;
        for (int i = 0; i <= n; ++i) {
            const double t = std::min(i * dt, duration_s);
            const double soc_frac =
                spec.soc_start / 100.0 + (current_a * t / 3600.0) / capacity;
            CycleSample s;
            s.time_s = t;
            s.voltage_v = ocv(soc_frac) + current_a * resistance + spec.noise_std_v * rng.normal();
            s.current_a = current_a;
            rec.samples.push_back(s);
            if (t >= duration_s) break;
        }
        // Short discharge tail so the log looks like a real cycle.
        const double discharge_a = -spec.discharge_rate_c * spec.nominal_capacity_ah;
        double t_tail = duration_s;
        for (int i = 0; i < 5; ++i) {
            t_tail += dt;
            CycleSample s;
            s.time_s = t_tail;
            s.voltage_v = ocv(spec.soc_end / 100.0) - 0.05 * (i + 1);
            s.current_a = discharge_a;
            rec.samples.push_back(s);
        }
        rec.phases.assign(rec.samples.size(), Phase::rest);
        rec.cc_begin = 0;
        rec.cc_end = rec.samples.size() - 5;
        for (std::size_t i = 0; i < rec.samples.size(); ++i)
            rec.phases[i] = i < rec.cc_end ? Phase::charge_cc : Phase::discharge;
        cycles.push_back(std::move(rec));
    }
    return cycles;
}

SynthDomainResult synth_domain(const SynthSpec& spec, bool labeled, double window_dod, double step,
                               bool smooth_ic, bool normalize) {
    SynthDomainResult out;
    out.dataset.labeled = labeled;
    out.dataset.meta.nominal_capacity_ah = spec.nominal_capacity_ah;
    out.dataset.meta.voltage_min = kVMin;
    out.dataset.meta.voltage_max = kVMax;
    out.dataset.meta.soc_start = spec.soc_start;
    out.dataset.meta.soc_end = spec.soc_end;
    out.dataset.meta.temperature_c = spec.temperature_c;
    out.dataset.meta.discharge_rate_c = spec.discharge_rate_c;
    out.dataset.meta.dataset_name = spec.dataset_name;

    for (const CycleRecord& rec : synth_cycles(spec)) {
        const double soh = synth_soh(spec, static_cast<int>(rec.cycle_index));
        for (const RawSegment& raw :
             segment_cycles(rec, window_dod, step, out.dataset.meta)) {
            ChargeSegment seg = compute_features(resample_segment(raw), smooth_ic);
            if (labeled)
                seg.soh_label = soh;
            else
                out.hidden_labels.push_back(soh);
            out.dataset.samples.push_back(std::move(seg));
        }
    }
    if (out.dataset.samples.empty()) throw DataError("synth_domain: no segments generated");
    if (normalize) out.dataset = normalize_domain(std::move(out.dataset));
    return out;
}

TransferPair synth_transfer_pair(const SynthSpec& source_spec, const SynthSpec& target_spec,
                                 bool smooth_ic) {
    source_spec.validate();
    target_spec.validate();
    if (source_spec.soc_start != 0.0 || source_spec.soc_end != 100.0)
        throw ConfigError("synth_transfer_pair: source must cover the full 0-100% range");
    const double target_dod = target_spec.soc_span();

    TransferPair pair;
    auto src = synth_domain(source_spec, true, target_dod, 10.0, smooth_ic, true);
    auto tgt = synth_domain(target_spec, false, target_dod, 10.0, smooth_ic, true);
    pair.source = std::move(src.dataset);
    pair.target = std::move(tgt.dataset);
    pair.hidden_target_labels = std::move(tgt.hidden_labels);
    return pair;
}

DomainDataset merge_domains(const std::vector<DomainDataset>& parts) {
    if (parts.empty()) throw DataError("merge_domains: nothing to merge");
    DomainDataset out;
    out.meta = parts[0].meta;
    out.labeled = parts[0].labeled;
    for (const auto& p : parts) {
        if (p.normalized) throw ConfigError("merge_domains: merge before normalization");
        if (p.labeled != out.labeled) throw ConfigError("merge_domains: mixed labeled flags");
        out.samples.insert(out.samples.end(), p.samples.begin(), p.samples.end());
        out.warnings.insert(out.warnings.end(), p.warnings.begin(), p.warnings.end());
    }
    return out;
}

void write_synth_battery_csv(const SynthSpec& spec, const std::string& cycles_path,
                             const std::string& labels_path) {
    std::ofstream csv(cycles_path, std::ios::binary);
    if (!csv) throw IoError("cannot write '" + cycles_path + "'");
    csv << "cycle_index,time_s,voltage_V,current_A\n";
    for (const CycleRecord& rec : synth_cycles(spec))
        for (const CycleSample& s : rec.samples)
            csv << rec.cycle_index << ',' << fmt_double(s.time_s) << ',' << fmt_double(s.voltage_v)
                << ',' << fmt_double(s.current_a) << '\n';
    if (!csv) throw IoError("failed writing '" + cycles_path + "'");

    std::ofstream labels(labels_path, std::ios::binary);
    if (!labels) throw IoError("cannot write '" + labels_path + "'");
    labels << "cycle_index,calibrated_capacity_Ah\n";
    for (int c = 1; c <= spec.n_cycles; ++c)
        labels << c << ',' << fmt_double(synth_soh(spec, c) * spec.nominal_capacity_ah) << '\n';
    if (!labels) throw IoError("failed writing '" + labels_path + "'");
}

void write_domain_meta(const SynthSpec& spec, const std::string& path) {
    nlohmann::ordered_json j;
    j["nominal_capacity_Ah"] = spec.nominal_capacity_ah;
    j["voltage_range"] = {kVMin, kVMax};
    j["soc_range"] = {spec.soc_start, spec.soc_end};
    j["temperature_C"] = spec.temperature_c;
    j["discharge_rate_C"] = spec.discharge_rate_c;
    j["dataset_name"] = spec.dataset_name;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << j.dump(2) << '\n';
}

}  // namespace skdan
