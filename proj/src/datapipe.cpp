#include "skdan/datapipe.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "skdan/io_util.hpp"

namespace skdan {

namespace {

using ordered_json = nlohmann::ordered_json;

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    return lines;
}

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Longest contiguous run of samples with positive current within 5% of the
// median positive current; first run wins ties.
void detect_cc_phase(CycleRecord& rec) {
    std::vector<double> positive;
    for (const auto& s : rec.samples)
        if (s.current_a > 0.0) positive.push_back(s.current_a);
    rec.phases.assign(rec.samples.size(), Phase::rest);
    rec.cc_begin = rec.cc_end = 0;
    if (positive.empty()) {
        for (std::size_t i = 0; i < rec.samples.size(); ++i)
            if (rec.samples[i].current_a < 0.0) rec.phases[i] = Phase::discharge;
        return;
    }
    const double med = median_of(positive);
    const auto is_cc = [&](const CycleSample& s) {
        return s.current_a > 0.0 && std::abs(s.current_a - med) < 0.05 * med;
    };
    std::size_t best_b = 0, best_e = 0, i = 0;
    const std::size_t n = rec.samples.size();
    while (i < n) {
        if (!is_cc(rec.samples[i])) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < n && is_cc(rec.samples[j])) ++j;
        if (j - i > best_e - best_b) {
            best_b = i;
            best_e = j;
        }
        i = j;
    }
    rec.cc_begin = best_b;
    rec.cc_end = best_e;
    for (std::size_t k = 0; k < n; ++k) {
        const double c = rec.samples[k].current_a;
        if (k >= best_b && k < best_e)
            rec.phases[k] = Phase::charge_cc;
        else if (c > 0.0)
            rec.phases[k] = Phase::charge_cv;
        else if (c < 0.0)
            rec.phases[k] = Phase::discharge;
    }
}

// Cumulative trapezoid integral of current over time, in Ah.
std::vector<double> cumulative_charge(const std::vector<CycleSample>& s, std::size_t b,
                                      std::size_t e) {
    std::vector<double> q(e - b, 0.0);
    for (std::size_t i = b + 1; i < e; ++i) {
        const double dt_h = (s[i].time_s - s[i - 1].time_s) / 3600.0;
        q[i - b] = q[i - b - 1] + 0.5 * (s[i].current_a + s[i - 1].current_a) * dt_h;
    }
    return q;
}

}  // namespace

std::vector<CycleRecord> parse_cycling_csv(const std::string& path,
                                           const CyclingCsvSchema& schema) {
    const auto lines = read_lines(path);
    if (lines.empty()) throw SchemaError("'" + path + "': empty file, header row required");
    const auto header = split_csv_line(lines[0]);
    const auto col = [&](const std::string& name) {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return i;
        throw SchemaError("'" + path + "': missing column '" + name + "'");
    };
    const std::size_t c_cycle = col(schema.cycle_column);
    const std::size_t c_time = col(schema.time_column);
    const std::size_t c_volt = col(schema.voltage_column);
    const std::size_t c_curr = col(schema.current_column);

    std::map<long, std::vector<CycleSample>> by_cycle;
    for (std::size_t ln = 1; ln < lines.size(); ++ln) {
        if (trim(lines[ln]).empty()) continue;
        const auto fields = split_csv_line(lines[ln]);
        const std::string ctx = path + ":" + std::to_string(ln + 1);
        if (fields.size() < header.size())
            throw DataError(ctx + ": expected " + std::to_string(header.size()) + " fields, got " +
                            std::to_string(fields.size()));
        CycleSample s;
        const long cycle = parse_long(fields[c_cycle], ctx);
        s.time_s = parse_double(fields[c_time], ctx);
        s.voltage_v = parse_double(fields[c_volt], ctx);
        s.current_a = parse_double(fields[c_curr], ctx);
        by_cycle[cycle].push_back(s);
    }

    std::vector<CycleRecord> records;
    records.reserve(by_cycle.size());
    for (auto& [cycle, samples] : by_cycle) {
        for (std::size_t i = 1; i < samples.size(); ++i)
            if (samples[i].time_s <= samples[i - 1].time_s)
                throw DataError("'" + path + "': non-monotone time in cycle " +
                                std::to_string(cycle));
        CycleRecord rec;
        rec.cycle_index = cycle;
        rec.samples = std::move(samples);
        detect_cc_phase(rec);
        records.push_back(std::move(rec));
    }
    return records;
}

DomainMeta load_domain_meta(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    ordered_json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw SchemaError("'" + path + "': invalid JSON: " + e.what());
    }
    const auto need = [&](const char* key) -> const ordered_json& {
        if (!j.contains(key)) throw SchemaError("'" + path + "': missing field '" + key + "'");
        return j.at(key);
    };
    DomainMeta m;
    m.nominal_capacity_ah = need("nominal_capacity_Ah").get<double>();
    const auto& vr = need("voltage_range");
    if (!vr.is_array() || vr.size() != 2)
        throw SchemaError("'" + path + "': voltage_range must be [min,max]");
    m.voltage_min = vr[0].get<double>();
    m.voltage_max = vr[1].get<double>();
    const auto& sr = need("soc_range");
    if (!sr.is_array() || sr.size() != 2)
        throw SchemaError("'" + path + "': soc_range must be [start%,end%]");
    m.soc_start = sr[0].get<double>();
    m.soc_end = sr[1].get<double>();
    m.temperature_c = need("temperature_C").get<double>();
    m.discharge_rate_c = need("discharge_rate_C").get<double>();
    m.dataset_name = need("dataset_name").get<std::string>();
    return m;
}

std::map<long, double> load_labels_csv(const std::string& path) {
    const auto lines = read_lines(path);
    if (lines.empty()) throw SchemaError("'" + path + "': empty file, header row required");
    const auto header = split_csv_line(lines[0]);
    if (header.size() < 2 || header[0] != "cycle_index" || header[1] != "calibrated_capacity_Ah")
        throw SchemaError("'" + path + "': expected header cycle_index,calibrated_capacity_Ah");
    std::map<long, double> labels;
    for (std::size_t ln = 1; ln < lines.size(); ++ln) {
        if (trim(lines[ln]).empty()) continue;
        const auto fields = split_csv_line(lines[ln]);
        const std::string ctx = path + ":" + std::to_string(ln + 1);
        if (fields.size() < 2) throw DataError(ctx + ": expected 2 fields");
        labels[parse_long(fields[0], ctx)] = parse_double(fields[1], ctx);
    }
    return labels;
}

std::vector<RawSegment> segment_cycles(const CycleRecord& record, double window_dod, double step,
                                       const DomainMeta& meta) {
    if (window_dod <= 0.0 || window_dod > 100.0)
        throw ConfigError("segment_cycles: window_dod must lie in (0,100], got " +
                          fmt_double(window_dod));
    if (step <= 0.0) throw ConfigError("segment_cycles: step must be positive");

    std::vector<RawSegment> out;
    if (!record.has_cc_phase()) return out;
    const auto& s = record.samples;
    const std::size_t b = record.cc_begin, e = record.cc_end;
    const std::vector<double> q = cumulative_charge(s, b, e);
    const double q_total = q.back();
    if (q_total <= 0.0) return out;

    const double span = meta.soc_end - meta.soc_start;
    if (window_dod > span + 1e-9) return out;

    // Interpolated (time, voltage) at a given cumulative charge.
    const auto at_charge = [&](double qt) {
        auto it = std::lower_bound(q.begin(), q.end(), qt);
        std::size_t i = static_cast<std::size_t>(it - q.begin());
        if (i == 0) return std::pair<double, double>{s[b].time_s, s[b].voltage_v};
        if (i >= q.size()) i = q.size() - 1;
        const double q0 = q[i - 1], q1 = q[i];
        const double alpha = q1 > q0 ? (qt - q0) / (q1 - q0) : 0.0;
        const auto& p0 = s[b + i - 1];
        const auto& p1 = s[b + i];
        return std::pair<double, double>{p0.time_s + alpha * (p1.time_s - p0.time_s),
                                         p0.voltage_v + alpha * (p1.voltage_v - p0.voltage_v)};
    };

    for (int k = 0;; ++k) {
        const double w0 = meta.soc_start + k * step;
        const double w1 = w0 + window_dod;
        if (w1 > meta.soc_end + 1e-9) break;
        const double qa = (w0 - meta.soc_start) / span * q_total;
        const double qb = std::min((w1 - meta.soc_start) / span * q_total, q_total);

        RawSegment seg;
        seg.soc_start = w0;
        seg.soc_end = w1;
        seg.cycle_index = record.cycle_index;
        const auto [ta, va] = at_charge(qa);
        seg.time_s.push_back(ta);
        seg.voltage_v.push_back(va);
        seg.charge_ah.push_back(qa);
        for (std::size_t i = 0; i < q.size(); ++i) {
            if (q[i] > qa && q[i] < qb && s[b + i].time_s > ta) {
                seg.time_s.push_back(s[b + i].time_s);
                seg.voltage_v.push_back(s[b + i].voltage_v);
                seg.charge_ah.push_back(q[i]);
            }
        }
        const auto [tb, vb] = at_charge(qb);
        if (tb > seg.time_s.back()) {
            seg.time_s.push_back(tb);
            seg.voltage_v.push_back(vb);
            seg.charge_ah.push_back(qb);
        }
        if (seg.time_s.size() >= 2) out.push_back(std::move(seg));
    }
    return out;
}

ResampledSegment resample_segment(const RawSegment& raw) {
    const std::size_t n = raw.time_s.size();
    if (n < 2)
        throw DataError("resample_segment: need at least 2 samples, got " + std::to_string(n) +
                        " (cycle " + std::to_string(raw.cycle_index) + ")");
    ResampledSegment out;
    out.soc_start = raw.soc_start;
    out.soc_end = raw.soc_end;
    out.cycle_index = raw.cycle_index;
    out.voltage.resize(kSegmentLength);
    out.charge.resize(kSegmentLength);

    const double t0 = raw.time_s.front(), t1 = raw.time_s.back();
    std::size_t j = 0;
    for (int g = 0; g < kSegmentLength; ++g) {
        const double tg = t0 + (t1 - t0) * g / (kSegmentLength - 1);
        while (j + 2 < n && raw.time_s[j + 1] <= tg) ++j;
        const double ta = raw.time_s[j], tb = raw.time_s[j + 1];
        const double alpha = tb > ta ? (tg - ta) / (tb - ta) : 0.0;
        out.voltage[g] = raw.voltage_v[j] + alpha * (raw.voltage_v[j + 1] - raw.voltage_v[j]);
        out.charge[g] = raw.charge_ah[j] + alpha * (raw.charge_ah[j + 1] - raw.charge_ah[j]);
    }
    // Endpoints bit-exact regardless of interpolation rounding.
    out.voltage[0] = raw.voltage_v.front();
    out.charge[0] = raw.charge_ah.front();
    out.voltage[kSegmentLength - 1] = raw.voltage_v.back();
    out.charge[kSegmentLength - 1] = raw.charge_ah.back();
    return out;
}

ChargeSegment compute_features(const ResampledSegment& seg, bool smooth_ic) {
    if (seg.voltage.size() != kSegmentLength || seg.charge.size() != kSegmentLength)
        throw DimensionError("compute_features: expected " + std::to_string(kSegmentLength) +
                             "-point channels");
    ChargeSegment out;
    out.soc_start = seg.soc_start;
    out.soc_end = seg.soc_end;
    out.cycle_index = seg.cycle_index;
    out.v = seg.voltage;
    out.dv = seg.voltage.array() - seg.voltage[0];
    out.dq = seg.charge.array() - seg.charge[0];
    out.ic.setZero(kSegmentLength);
    for (int j = 1; j < kSegmentLength; ++j) {
        const double dv_step = out.dv[j] - out.dv[j - 1];
        const double dq_step = out.dq[j] - out.dq[j - 1];
        // Degenerate voltage step: carry the previous IC value forward.
        out.ic[j] = std::abs(dv_step) < 1e-9 ? out.ic[j - 1] : dq_step / dv_step;
    }
    if (smooth_ic) {
        Eigen::VectorXd smoothed(kSegmentLength);
        for (int j = 0; j < kSegmentLength; ++j) {
            const int lo = std::max(0, j - 2), hi = std::min(kSegmentLength - 1, j + 2);
            smoothed[j] = out.ic.segment(lo, hi - lo + 1).mean();
        }
        out.ic = smoothed;
        out.ic[0] = 0.0;  // channel invariant
    }
    return out;
}

namespace {

Eigen::VectorXd& channel_of(ChargeSegment& s, int c) {
    switch (c) {
        case 0: return s.v;
        case 1: return s.dv;
        case 2: return s.dq;
        default: return s.ic;
    }
}

const char* channel_name(int c) {
    switch (c) {
        case 0: return "v";
        case 1: return "dv";
        case 2: return "dq";
        default: return "ic";
    }
}

}  // namespace

DomainDataset normalize_domain(DomainDataset dataset) {
    if (dataset.samples.empty()) throw DataError("normalize_domain: empty domain");
    if (dataset.normalized) return dataset;
    for (int c = 0; c < 4; ++c) {
        double mn = std::numeric_limits<double>::infinity();
        double mx = -std::numeric_limits<double>::infinity();
        for (auto& s : dataset.samples) {
            const auto& ch = channel_of(s, c);
            mn = std::min(mn, ch.minCoeff());
            mx = std::max(mx, ch.maxCoeff());
        }
        NormStats st;
        st.min = mn;
        st.max = mx;
        st.constant = !(mx > mn);
        if (st.constant) {
            dataset.warnings.push_back(std::string("channel ") + channel_name(c) +
                                       " is constant (" + fmt_double(mn) +
                                       "); scaled to all-zeros");
            for (auto& s : dataset.samples) channel_of(s, c).setZero();
        } else {
            for (auto& s : dataset.samples)
                channel_of(s, c) = (channel_of(s, c).array() - mn) / (mx - mn);
        }
        dataset.stats[static_cast<std::size_t>(c)] = st;
    }
    dataset.normalized = true;
    return dataset;
}

ChargeSegment denormalize_segment(const ChargeSegment& seg, const std::array<NormStats, 4>& stats) {
    ChargeSegment out = seg;
    for (int c = 0; c < 4; ++c) {
        const auto& st = stats[static_cast<std::size_t>(c)];
        if (st.constant)
            channel_of(out, c).setConstant(st.min);
        else
            channel_of(out, c) =
                channel_of(out, c).array() * (st.max - st.min) + st.min;
    }
    return out;
}

DomainDataset apply_normalization(DomainDataset dataset, const std::array<NormStats, 4>& stats) {
    if (dataset.normalized) throw ConfigError("apply_normalization: dataset already normalized");
    for (int c = 0; c < 4; ++c) {
        const auto& st = stats[static_cast<std::size_t>(c)];
        for (auto& s : dataset.samples) {
            if (st.constant)
                channel_of(s, c).setZero();
            else
                channel_of(s, c) = (channel_of(s, c).array() - st.min) / (st.max - st.min);
        }
    }
    dataset.stats = stats;
    dataset.normalized = true;
    return dataset;
}

DomainDataset build_domain(const std::vector<std::string>& csv_paths,
                           const std::vector<std::string>& labels_paths, const DomainMeta& meta,
                           const DomainBuildOptions& options) {
    if (!labels_paths.empty() && labels_paths.size() != csv_paths.size())
        throw ConfigError("build_domain: labels_paths must be empty or match csv_paths");
    DomainDataset ds;
    ds.meta = meta;
    ds.labeled = !labels_paths.empty();

    for (std::size_t f = 0; f < csv_paths.size(); ++f) {
        const auto records = parse_cycling_csv(csv_paths[f]);
        std::map<long, double> capacities;
        if (ds.labeled) capacities = load_labels_csv(labels_paths[f]);

        // SOH at a cycle: exact calibration if present, otherwise linear
        // interpolation between the two surrounding calibrations.
        const auto soh_at = [&](long cycle) -> std::optional<double> {
            if (capacities.empty()) return std::nullopt;
            auto it = capacities.lower_bound(cycle);
            if (it != capacities.end() && it->first == cycle)
                return it->second / meta.nominal_capacity_ah;
            if (it == capacities.begin() || it == capacities.end()) return std::nullopt;
            const auto hi = it;
            const auto lo = std::prev(it);
            const double alpha = static_cast<double>(cycle - lo->first) /
                                 static_cast<double>(hi->first - lo->first);
            const double cap = lo->second + alpha * (hi->second - lo->second);
            return cap / meta.nominal_capacity_ah;
        };

        for (const auto& rec : records) {
            std::optional<double> label;
            if (ds.labeled) {
                label = soh_at(rec.cycle_index);
                if (!label) continue;  // outside the calibrated range
                if (*label <= 0.0)
                    throw DataError("build_domain: non-positive SOH at cycle " +
                                    std::to_string(rec.cycle_index));
            }
            for (const auto& raw : segment_cycles(rec, options.window_dod, options.step, meta)) {
                ChargeSegment seg = compute_features(resample_segment(raw), options.smooth_ic);
                seg.soh_label = label;
                ds.samples.push_back(std::move(seg));
            }
        }
    }
    if (ds.samples.empty()) throw DataError("build_domain: no usable segments");
    if (options.normalize) ds = normalize_domain(std::move(ds));
    return ds;
}

// --- KDE ---------------------------------------------------------------------

std::vector<double> kde_density(const std::vector<double>& values, const std::vector<double>& grid,
                                double bandwidth) {
    if (values.empty()) throw DataError("kde_density: empty input");
    if (values.size() < 2) throw DataError("kde_density: need at least 2 values");
    if (!(bandwidth > 0.0)) throw ConfigError("kde_density: bandwidth must be positive");
    constexpr double inv_sqrt_2pi = 0.3989422804014326779399461;
    std::vector<double> out(grid.size(), 0.0);
    const double inv_h = 1.0 / bandwidth;
    const double norm = inv_sqrt_2pi * inv_h / static_cast<double>(values.size());
    for (std::size_t g = 0; g < grid.size(); ++g) {
        double acc = 0.0;
        for (double v : values) {
            const double z = (grid[g] - v) * inv_h;
            acc += std::exp(-0.5 * z * z);
        }
        out[g] = acc * norm;
    }
    return out;
}

double silverman_bandwidth(const std::vector<double>& values) {
    const std::size_t n = values.size();
    if (n < 2) throw DataError("silverman_bandwidth: need at least 2 values");
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n - 1);
    std::vector<double> sorted(values);
    std::sort(sorted.begin(), sorted.end());
    const auto quantile = [&](double p) {
        const double idx = p * static_cast<double>(n - 1);
        const std::size_t lo = static_cast<std::size_t>(idx);
        const double alpha = idx - static_cast<double>(lo);
        return lo + 1 < n ? sorted[lo] + alpha * (sorted[lo + 1] - sorted[lo]) : sorted[lo];
    };
    const double iqr = quantile(0.75) - quantile(0.25);
    const double sigma = std::sqrt(var);
    const double spread = iqr > 0.0 ? std::min(sigma, iqr / 1.34) : sigma;
    return 0.9 * spread * std::pow(static_cast<double>(n), -0.2);
}

std::vector<double> make_kde_grid(const std::vector<double>& values, double bandwidth,
                                  int n_points) {
    if (values.empty()) throw DataError("make_kde_grid: empty input");
    if (n_points < 2) throw ConfigError("make_kde_grid: need at least 2 grid points");
    const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
    const double lo = *mn - 4.0 * bandwidth;
    const double hi = *mx + 4.0 * bandwidth;
    std::vector<double> grid(static_cast<std::size_t>(n_points));
    for (int i = 0; i < n_points; ++i)
        grid[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / (n_points - 1);
    return grid;
}

void write_kde_csv(const std::string& path, const std::vector<double>& grid,
                   const std::vector<double>& density) {
    if (grid.size() != density.size())
        throw DimensionError("write_kde_csv: grid and density lengths differ");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << "grid_value,density\n";
    for (std::size_t i = 0; i < grid.size(); ++i)
        out << fmt_double(grid[i]) << ',' << fmt_double(density[i]) << '\n';
}

// --- serialization -------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'S', 'K', 'D', 'S'};
constexpr std::uint32_t kVersion = 1;

void write_raw(std::ostream& out, const void* p, std::size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <typename T>
void write_pod(std::ostream& out, T v) {
    write_raw(out, &v, sizeof(T));
}

void read_raw(std::istream& in, void* p, std::size_t n, const std::string& path) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!in) throw SchemaError("'" + path + "': truncated dataset file");
}

template <typename T>
T read_pod(std::istream& in, const std::string& path) {
    T v;
    read_raw(in, &v, sizeof(T), path);
    return v;
}

void write_vec(std::ostream& out, const Eigen::VectorXd& v) {
    write_raw(out, v.data(), sizeof(double) * static_cast<std::size_t>(v.size()));
}

}  // namespace

void save_dataset(const DomainDataset& dataset, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path + "'");
    ordered_json header;
    header["dataset_name"] = dataset.meta.dataset_name;
    header["labeled"] = dataset.labeled;
    header["normalized"] = dataset.normalized;
    header["meta"] = {{"nominal_capacity_Ah", dataset.meta.nominal_capacity_ah},
                      {"voltage_range", {dataset.meta.voltage_min, dataset.meta.voltage_max}},
                      {"soc_range", {dataset.meta.soc_start, dataset.meta.soc_end}},
                      {"temperature_C", dataset.meta.temperature_c},
                      {"discharge_rate_C", dataset.meta.discharge_rate_c}};
    ordered_json stats = ordered_json::array();
    for (const auto& st : dataset.stats)
        stats.push_back({{"min", st.min}, {"max", st.max}, {"constant", st.constant}});
    header["stats"] = stats;
    header["warnings"] = dataset.warnings;
    header["n_samples"] = dataset.samples.size();
    const std::string hs = header.dump();

    write_raw(out, kMagic, 4);
    write_pod<std::uint32_t>(out, kVersion);
    write_pod<std::uint64_t>(out, hs.size());
    write_raw(out, hs.data(), hs.size());
    for (const auto& s : dataset.samples) {
        write_pod<std::int64_t>(out, s.cycle_index);
        write_pod<double>(out, s.soc_start);
        write_pod<double>(out, s.soc_end);
        write_pod<std::uint8_t>(out, s.soh_label.has_value() ? 1 : 0);
        write_pod<double>(out, s.soh_label.value_or(0.0));
        write_vec(out, s.v);
        write_vec(out, s.dv);
        write_vec(out, s.dq);
        write_vec(out, s.ic);
    }
    if (!out) throw IoError("failed writing '" + path + "'");
}

DomainDataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    char magic[4];
    read_raw(in, magic, 4, path);
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw SchemaError("'" + path + "': not a dataset file (bad magic)");
    const auto version = read_pod<std::uint32_t>(in, path);
    if (version != kVersion)
        throw SchemaError("'" + path + "': unsupported dataset version " +
                          std::to_string(version));
    const auto hlen = read_pod<std::uint64_t>(in, path);
    std::string hs(hlen, '\0');
    read_raw(in, hs.data(), hlen, path);
    ordered_json header;
    try {
        header = ordered_json::parse(hs);
    } catch (const std::exception& e) {
        throw SchemaError("'" + path + "': corrupt header: " + e.what());
    }

    DomainDataset ds;
    ds.meta.dataset_name = header.at("dataset_name").get<std::string>();
    ds.labeled = header.at("labeled").get<bool>();
    ds.normalized = header.at("normalized").get<bool>();
    const auto& m = header.at("meta");
    ds.meta.nominal_capacity_ah = m.at("nominal_capacity_Ah").get<double>();
    ds.meta.voltage_min = m.at("voltage_range")[0].get<double>();
    ds.meta.voltage_max = m.at("voltage_range")[1].get<double>();
    ds.meta.soc_start = m.at("soc_range")[0].get<double>();
    ds.meta.soc_end = m.at("soc_range")[1].get<double>();
    ds.meta.temperature_c = m.at("temperature_C").get<double>();
    ds.meta.discharge_rate_c = m.at("discharge_rate_C").get<double>();
    for (std::size_t c = 0; c < 4; ++c) {
        const auto& st = header.at("stats")[c];
        ds.stats[c].min = st.at("min").get<double>();
        ds.stats[c].max = st.at("max").get<double>();
        ds.stats[c].constant = st.at("constant").get<bool>();
    }
    ds.warnings = header.at("warnings").get<std::vector<std::string>>();
    const auto n = header.at("n_samples").get<std::uint64_t>();

    ds.samples.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) {
        ChargeSegment s;
        s.cycle_index = static_cast<long>(read_pod<std::int64_t>(in, path));
        s.soc_start = read_pod<double>(in, path);
        s.soc_end = read_pod<double>(in, path);
        const auto has_label = read_pod<std::uint8_t>(in, path);
        const double label = read_pod<double>(in, path);
        if (has_label) s.soh_label = label;
        for (Eigen::VectorXd* ch : {&s.v, &s.dv, &s.dq, &s.ic}) {
            ch->resize(kSegmentLength);
            read_raw(in, ch->data(), sizeof(double) * kSegmentLength, path);
        }
        ds.samples.push_back(std::move(s));
    }
    if (ds.labeled)
        for (const auto& s : ds.samples)
            if (!s.soh_label)
                throw SchemaError("'" + path + "': labeled dataset has unlabeled sample");
    return ds;
}

}  // namespace skdan
