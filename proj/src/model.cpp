#include "skdan/model.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

namespace skdan {

namespace {
using ordered_json = nlohmann::ordered_json;
}

SkdanModel init_model(SadConfig sad_cfg, PredictorConfig pred_cfg, std::uint64_t seed) {
    sad_cfg.validate();
    pred_cfg.input_length = sad_cfg.output_length(kSegmentLength);
    pred_cfg.input_channels = sad_cfg.d_model;
    pred_cfg.validate();
    SkdanModel m;
    m.sad_config = sad_cfg;
    m.predictor_config = pred_cfg;
    Rng rng(seed);
    m.sad = init_sad_params(sad_cfg, rng);
    m.predictor = init_predictor_params(pred_cfg, rng);
    return m;
}

std::vector<const Tensor*> model_parameters(const SkdanModel& m) {
    auto list = model_parameters(const_cast<SkdanModel&>(m));
    return {list.begin(), list.end()};
}

std::vector<Tensor*> model_parameters(SkdanModel& m) {
    std::vector<Tensor*> out = sad_parameters(m.sad);
    for (Tensor* p : predictor_parameters(m.predictor)) out.push_back(p);
    return out;
}

ModelVars lift_model(Tape& tape, const SkdanModel& m, bool tracked) {
    ModelVars v;
    v.sad = lift_sad(tape, m.sad, tracked);
    v.predictor = lift_predictor(tape, m.predictor, tracked);
    return v;
}

ModelVars vars_from_list(const SkdanModel& m, const std::vector<Var>& params) {
    ModelVars v;
    std::size_t i = 0;
    const auto next = [&]() -> Var {
        if (i >= params.size())
            throw DimensionError("vars_from_list: too few parameter nodes for this model");
        return params[i++];
    };
    v.sad.embed_w = next();
    v.sad.embed_b = next();
    for (int l = 0; l < m.sad_config.n_layers; ++l) {
        SadLayerVars lv;
        if (m.sad_config.use_attention) {
            for (int h = 0; h < m.sad_config.n_heads; ++h) lv.wq.push_back(next());
            for (int h = 0; h < m.sad_config.n_heads; ++h) lv.wk.push_back(next());
            for (int h = 0; h < m.sad_config.n_heads; ++h) lv.wv.push_back(next());
        }
        if (m.sad_config.use_distillation) {
            lv.distill_w = next();
            lv.distill_b = next();
        }
        v.sad.layers.push_back(std::move(lv));
    }
    if (m.predictor_config.use_cnn) {
        v.predictor.conv1_w = next();
        v.predictor.conv1_b = next();
        v.predictor.conv2_w = next();
        v.predictor.conv2_b = next();
    }
    v.predictor.w1 = next();
    v.predictor.b1 = next();
    v.predictor.w2 = next();
    v.predictor.b2 = next();
    if (i != params.size())
        throw DimensionError("vars_from_list: " + std::to_string(params.size() - i) +
                             " unused parameter nodes");
    return v;
}

Tensor segment_to_tensor(const ChargeSegment& seg) {
    if (seg.v.size() != kSegmentLength)
        throw DimensionError("segment_to_tensor: expected " + std::to_string(kSegmentLength) +
                             "-point channels, got " + std::to_string(seg.v.size()));
    Tensor t({kSegmentLength, 4});
    for (Index i = 0; i < kSegmentLength; ++i) {
        t.at(i, 0) = seg.v[i];
        t.at(i, 1) = seg.dv[i];
        t.at(i, 2) = seg.dq[i];
        t.at(i, 3) = seg.ic[i];
    }
    return t;
}

double model_predict(const SkdanModel& m, const ChargeSegment& seg) {
    Tape tape;
    ModelVars mv = lift_model(tape, m, false);
    auto x = tape.constant(segment_to_tensor(seg));
    auto f = extract_features(x, mv.sad, m.sad_config);
    Rng unused(0);
    return predict_soh(f, mv.predictor, m.predictor_config, false, unused).value().item();
}

Eigen::VectorXd model_features(const SkdanModel& m, const ChargeSegment& seg) {
    Tape tape;
    ModelVars mv = lift_model(tape, m, false);
    auto x = tape.constant(segment_to_tensor(seg));
    auto f = extract_features(x, mv.sad, m.sad_config);
    return Eigen::VectorXd(f.value().flat().matrix());
}

// --- serialization ----------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'S', 'K', 'D', 'M'};
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
    if (!in) throw SchemaError("'" + path + "': truncated model file");
}

template <typename T>
T read_pod(std::istream& in, const std::string& path) {
    T v;
    read_raw(in, &v, sizeof(T), path);
    return v;
}

ordered_json config_json(const SkdanModel& m) {
    ordered_json j;
    j["sad"] = {{"d_model", m.sad_config.d_model},
                {"n_heads", m.sad_config.n_heads},
                {"n_layers", m.sad_config.n_layers},
                {"input_channels", m.sad_config.input_channels},
                {"pe_base_10000", m.sad_config.pe_base_10000},
                {"use_attention", m.sad_config.use_attention},
                {"use_distillation", m.sad_config.use_distillation}};
    j["predictor"] = {{"kernel_size", m.predictor_config.kernel_size},
                      {"conv1_channels", m.predictor_config.conv1_channels},
                      {"conv2_channels", m.predictor_config.conv2_channels},
                      {"pool_size", m.predictor_config.pool_size},
                      {"pool_stride", m.predictor_config.pool_stride},
                      {"fnn_width", m.predictor_config.fnn_width},
                      {"dropout_rate", m.predictor_config.dropout_rate},
                      {"gamma_noise", m.predictor_config.gamma_noise},
                      {"input_length", m.predictor_config.input_length},
                      {"input_channels", m.predictor_config.input_channels},
                      {"use_cnn", m.predictor_config.use_cnn}};
    return j;
}

void configs_from_json(const ordered_json& j, SkdanModel& m) {
    const auto& s = j.at("sad");
    m.sad_config.d_model = s.at("d_model").get<int>();
    m.sad_config.n_heads = s.at("n_heads").get<int>();
    m.sad_config.n_layers = s.at("n_layers").get<int>();
    m.sad_config.input_channels = s.at("input_channels").get<int>();
    m.sad_config.pe_base_10000 = s.at("pe_base_10000").get<bool>();
    m.sad_config.use_attention = s.at("use_attention").get<bool>();
    m.sad_config.use_distillation = s.at("use_distillation").get<bool>();
    const auto& p = j.at("predictor");
    m.predictor_config.kernel_size = p.at("kernel_size").get<int>();
    m.predictor_config.conv1_channels = p.at("conv1_channels").get<int>();
    m.predictor_config.conv2_channels = p.at("conv2_channels").get<int>();
    m.predictor_config.pool_size = p.at("pool_size").get<int>();
    m.predictor_config.pool_stride = p.at("pool_stride").get<int>();
    m.predictor_config.fnn_width = p.at("fnn_width").get<int>();
    m.predictor_config.dropout_rate = p.at("dropout_rate").get<double>();
    m.predictor_config.gamma_noise = p.at("gamma_noise").get<double>();
    m.predictor_config.input_length = p.at("input_length").get<int>();
    m.predictor_config.input_channels = p.at("input_channels").get<int>();
    m.predictor_config.use_cnn = p.at("use_cnn").get<bool>();
}

}  // namespace

void save_model(const SkdanModel& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path + "'");
    const std::string header = config_json(m).dump();
    write_raw(out, kMagic, 4);
    write_pod<std::uint32_t>(out, kVersion);
    write_pod<std::uint64_t>(out, header.size());
    write_raw(out, header.data(), header.size());
    const auto params = model_parameters(m);
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
    for (const Tensor* p : params) {
        write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(p->rank()));
        for (Index d : p->shape()) write_pod<std::int64_t>(out, d);
        write_raw(out, p->flat().data(), sizeof(double) * static_cast<std::size_t>(p->size()));
    }
    if (!out) throw IoError("failed writing '" + path + "'");
}

SkdanModel load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    char magic[4];
    read_raw(in, magic, 4, path);
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw SchemaError("'" + path + "': not a model file (bad magic)");
    const auto version = read_pod<std::uint32_t>(in, path);
    if (version != kVersion)
        throw SchemaError("'" + path + "': unsupported model version " + std::to_string(version));
    const auto hlen = read_pod<std::uint64_t>(in, path);
    std::string hs(hlen, '\0');
    read_raw(in, hs.data(), hlen, path);
    SkdanModel m;
    try {
        configs_from_json(ordered_json::parse(hs), m);
    } catch (const std::exception& e) {
        throw SchemaError("'" + path + "': corrupt model header: " + e.what());
    }
    // Rebuild the parameter skeleton, then overwrite values from the file.
    Rng rng(0);
    m.sad = init_sad_params(m.sad_config, rng);
    m.predictor = init_predictor_params(m.predictor_config, rng);
    const auto params = model_parameters(m);
    const auto n = read_pod<std::uint32_t>(in, path);
    if (n != params.size())
        throw SchemaError("'" + path + "': expected " + std::to_string(params.size()) +
                          " parameter blocks, file has " + std::to_string(n));
    for (Tensor* p : params) {
        const auto rank = read_pod<std::uint32_t>(in, path);
        Shape shape(rank);
        for (auto& d : shape) d = read_pod<std::int64_t>(in, path);
        if (shape != p->shape())
            throw SchemaError("'" + path + "': parameter shape " + shape_str(shape) +
                              " does not match config-derived " + shape_str(p->shape()));
        read_raw(in, p->flat().data(), sizeof(double) * static_cast<std::size_t>(p->size()), path);
    }
    return m;
}

}  // namespace skdan
