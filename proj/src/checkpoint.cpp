#include "teethseg/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <stdexcept>

namespace teethseg {

namespace {

using nlohmann::json;

static_assert(sizeof(double) == 8);

void append_doubles(std::string& payload, const Tensor& t) {
    const std::size_t off = payload.size();
    payload.resize(off + t.data.size() * 8);
    if constexpr (std::endian::native == std::endian::little) {
        std::memcpy(payload.data() + off, t.data.data(), t.data.size() * 8);
    } else {
        for (std::size_t i = 0; i < t.data.size(); ++i) {
            std::uint64_t bits;
            std::memcpy(&bits, &t.data[i], 8);
            for (int b = 0; b < 8; ++b)
                payload[off + i * 8 + static_cast<std::size_t>(b)] = static_cast<char>((bits >> (8 * b)) & 0xFF);
        }
    }
}

void read_doubles(const std::string& payload, std::size_t offset, Tensor& t) {
    if (offset + t.data.size() * 8 > payload.size())
        throw std::runtime_error("checkpoint: payload slice out of range");
    if constexpr (std::endian::native == std::endian::little) {
        std::memcpy(t.data.data(), payload.data() + offset, t.data.size() * 8);
    } else {
        for (std::size_t i = 0; i < t.data.size(); ++i) {
            std::uint64_t bits = 0;
            for (int b = 7; b >= 0; --b)
                bits = (bits << 8) | static_cast<std::uint8_t>(payload[offset + i * 8 + static_cast<std::size_t>(b)]);
            std::memcpy(&t.data[i], &bits, 8);
        }
    }
}

json config_to_json(const ModelConfig& c) {
    return json{{"depth", c.depth},
                {"base_width", c.base_width},
                {"num_classes", c.num_classes},
                {"use_deep_supervision", c.use_deep_supervision},
                {"use_swin", c.use_swin},
                {"use_tab", c.use_tab},
                {"swin_window", c.swin_window},
                {"dropout_p", c.dropout_p},
                {"input_height", c.input_height},
                {"input_width", c.input_width},
                {"in_channels", c.in_channels}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.depth = j.at("depth").get<int>();
    c.base_width = j.at("base_width").get<int>();
    c.num_classes = j.at("num_classes").get<int>();
    c.use_deep_supervision = j.at("use_deep_supervision").get<bool>();
    c.use_swin = j.at("use_swin").get<bool>();
    c.use_tab = j.at("use_tab").get<bool>();
    c.swin_window = j.at("swin_window").get<int>();
    c.dropout_p = j.at("dropout_p").get<double>();
    c.input_height = j.at("input_height").get<int>();
    c.input_width = j.at("input_width").get<int>();
    c.in_channels = j.at("in_channels").get<int>();
    return c;
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xFF));
}

std::uint64_t get_u64(const std::string& s, std::size_t off) {
    std::uint64_t v = 0;
    for (int b = 7; b >= 0; --b) v = (v << 8) | static_cast<std::uint8_t>(s[off + static_cast<std::size_t>(b)]);
    return v;
}

std::uint32_t get_u32(const std::string& s, std::size_t off) {
    std::uint32_t v = 0;
    for (int b = 3; b >= 0; --b) v = (v << 8) | static_cast<std::uint8_t>(s[off + static_cast<std::size_t>(b)]);
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const TrainState& state) {
    json manifest;
    manifest["epoch"] = state.epoch;
    manifest["seed"] = state.seed;
    manifest["config"] = config_to_json(state.config);
    manifest["optimizer"] = {{"beta1", state.opt.beta1},
                             {"beta2", state.opt.beta2},
                             {"eps", state.opt.eps},
                             {"step", state.opt.step}};
    json sched = {{"lr", state.sched.lr},
                  {"stall", state.sched.stall},
                  {"factor", state.sched.factor},
                  {"patience", state.sched.patience},
                  {"floor_lr", state.sched.floor_lr},
                  {"min_delta", state.sched.min_delta}};
    if (std::isinf(state.sched.best))
        sched["best"] = nullptr;
    else
        sched["best"] = state.sched.best;
    manifest["schedule"] = sched;
    manifest["rng"] = state.rng_state;

    std::string payload;
    json params = json::array();
    for (const auto& [name, entry] : state.params.entries()) {
        json p;
        p["name"] = name;
        p["shape"] = entry.value.shape;
        p["trainable"] = entry.trainable;
        p["offset"] = payload.size();
        append_doubles(payload, entry.value);
        if (entry.trainable) {
            const auto mit = state.opt.m.find(name);
            const auto vit = state.opt.v.find(name);
            const Tensor zeros(entry.value.shape);
            p["m_offset"] = payload.size();
            append_doubles(payload, mit != state.opt.m.end() ? mit->second : zeros);
            p["v_offset"] = payload.size();
            append_doubles(payload, vit != state.opt.v.end() ? vit->second : zeros);
        }
        params.push_back(p);
    }
    manifest["params"] = params;
    manifest["payload_bytes"] = payload.size();

    const std::string mstr = manifest.dump();
    std::string out;
    out.append(kCheckpointMagic, sizeof(kCheckpointMagic));
    put_u32(out, kCheckpointVersion);
    put_u64(out, mstr.size());
    out += mstr;
    out += payload;

    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error("checkpoint: short write to '" + path + "'");
}

TrainState load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    if (buf.size() < 20) throw std::runtime_error("checkpoint: '" + path + "' truncated before header");
    if (std::memcmp(buf.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0)
        throw std::runtime_error("checkpoint: '" + path + "' has bad magic, expected TSEGCKPT");
    const std::uint32_t version = get_u32(buf, 8);
    if (version != kCheckpointVersion)
        throw std::runtime_error("checkpoint: '" + path + "' has format version " + std::to_string(version) +
                                 ", this build reads version " + std::to_string(kCheckpointVersion));
    const std::uint64_t mlen = get_u64(buf, 12);
    if (20 + mlen > buf.size()) throw std::runtime_error("checkpoint: '" + path + "' truncated inside manifest");
    json manifest = json::parse(buf.substr(20, mlen));
    const std::string payload = buf.substr(20 + mlen);
    const std::uint64_t expect = manifest.at("payload_bytes").get<std::uint64_t>();
    if (payload.size() != expect)
        throw std::runtime_error("checkpoint: '" + path + "' payload size mismatch: expected " +
                                 std::to_string(expect) + " bytes, got " + std::to_string(payload.size()));

    TrainState st;
    st.epoch = manifest.at("epoch").get<int>();
    st.seed = manifest.at("seed").get<std::uint64_t>();
    st.config = config_from_json(manifest.at("config"));
    st.opt.beta1 = manifest.at("optimizer").at("beta1").get<double>();
    st.opt.beta2 = manifest.at("optimizer").at("beta2").get<double>();
    st.opt.eps = manifest.at("optimizer").at("eps").get<double>();
    st.opt.step = manifest.at("optimizer").at("step").get<std::int64_t>();
    const json& sj = manifest.at("schedule");
    st.sched.lr = sj.at("lr").get<double>();
    st.sched.best = sj.at("best").is_null() ? std::numeric_limits<double>::infinity()
                                            : sj.at("best").get<double>();
    st.sched.stall = sj.at("stall").get<int>();
    st.sched.factor = sj.at("factor").get<double>();
    st.sched.patience = sj.at("patience").get<int>();
    st.sched.floor_lr = sj.at("floor_lr").get<double>();
    st.sched.min_delta = sj.at("min_delta").get<double>();
    st.rng_state = manifest.at("rng").get<std::string>();

    for (const auto& p : manifest.at("params")) {
        const std::string name = p.at("name").get<std::string>();
        const Shape shape = p.at("shape").get<Shape>();
        const bool trainable = p.at("trainable").get<bool>();
        Tensor& value = st.params.declare(name, shape, trainable);
        read_doubles(payload, p.at("offset").get<std::size_t>(), value);
        if (trainable) {
            Tensor m(shape), v(shape);
            read_doubles(payload, p.at("m_offset").get<std::size_t>(), m);
            read_doubles(payload, p.at("v_offset").get<std::size_t>(), v);
            st.opt.m.emplace(name, std::move(m));
            st.opt.v.emplace(name, std::move(v));
        }
    }
    return st;
}

}  // namespace teethseg
