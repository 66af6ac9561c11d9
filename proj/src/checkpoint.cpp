// Copyright 2026 The TFMoE Authors
// SPDX-License-Identifier: Apache-2.0

#include "tfmoe/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

#include "json.hpp"

namespace tfmoe::ckpt {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'T', 'F', 'M', 'O', 'E', 'C', 'K', 'P'};

template <class T>
void put_le(std::vector<unsigned char>& out, T v) {
    static_assert(std::is_unsigned_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

template <class T>
T get_le(const unsigned char* p) {
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(p[i]) << (8 * i);
    return v;
}

class PayloadWriter {
public:
    std::size_t append(const Tensor& t) {
        const std::size_t off = values_.size();
        values_.insert(values_.end(), t.values().begin(), t.values().end());
        return off;
    }
    const std::vector<double>& values() const { return values_; }

private:
    std::vector<double> values_;
};

json array_entry(const std::string& name, const std::string& role, const Tensor& t, std::size_t offset) {
    return {{"name", name}, {"role", role}, {"shape", t.shape()}, {"offset", offset}};
}

json norm_json(const data::NormStats& n) { return {{"mean", n.mean}, {"std", n.std}}; }

data::NormStats norm_from(const json& j) { return {j.at("mean").get<double>(), j.at("std").get<double>()}; }

}  // namespace

std::uint32_t crc32_of(std::span<const unsigned char> bytes) {
    uLong crc = ::crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed in chunks
    std::size_t pos = 0;
    while (pos < bytes.size()) {
        const auto n = static_cast<uInt>(std::min<std::size_t>(bytes.size() - pos, 1u << 30));
        crc = ::crc32(crc, bytes.data() + pos, n);
        pos += n;
    }
    return static_cast<std::uint32_t>(crc);
}

void save_checkpoint(const engine::ModelState& st, const std::string& config_hash,
                     const std::filesystem::path& path) {
    PayloadWriter payload;
    json arrays = json::array();
    json params = json::array();
    for (const auto& [name, e] : st.params) {
        json a = array_entry(name, "param", e.var.value(), payload.append(e.var.value()));
        a["group"] = to_string(e.group);
        if (e.bounds) a["bounds"] = {e.bounds->lo, e.bounds->hi};
        arrays.push_back(a);
    }
    for (const auto& [name, m] : st.adam.moments) {
        json a = array_entry(name, "adam.m", m.m, payload.append(m.m));
        a["step"] = m.step;
        arrays.push_back(a);
        arrays.push_back(array_entry(name, "adam.v", m.v, payload.append(m.v)));
    }
    if (st.centroids.numel() > 0)
        arrays.push_back(array_entry("centroids", "centroids", st.centroids, payload.append(st.centroids)));

    json task_norms = json::object();
    for (const auto& [t, n] : st.task_norms) task_norms[std::to_string(t)] = norm_json(n);
    const json manifest = {
        {"format_version", kFormatVersion},
        {"config_hash", config_hash},
        {"experts", st.experts},
        {"steps_per_week", st.steps_per_week},
        {"seed", st.seed},
        {"predictor",
         {{"input_steps", st.predictor.input_steps},
          {"horizon", st.predictor.horizon},
          {"embed_dim", st.predictor.embed_dim},
          {"diffusion_steps", st.predictor.diffusion_steps},
          {"kernel", st.predictor.kernel}}},
        {"trained_task", st.trained_task},
        {"pretrained", st.pretrained},
        {"norm", norm_json(st.norm)},
        {"task_norms", task_norms},
        {"sg_nodes", st.sg_nodes},
        {"sg_labels", st.sg_labels},
        {"adam",
         {{"step", st.adam.step},
          {"lr", st.adam.lr},
          {"beta1", st.adam.beta1},
          {"beta2", st.adam.beta2},
          {"eps", st.adam.eps}}},
        {"arrays", arrays},
    };
    const std::string text = manifest.dump();

    std::vector<unsigned char> buf(kMagic, kMagic + 8);
    put_le<std::uint32_t>(buf, kFormatVersion);
    put_le<std::uint64_t>(buf, text.size());
    buf.insert(buf.end(), text.begin(), text.end());
    put_le<std::uint64_t>(buf, payload.values().size());
    for (double v : payload.values()) put_le<std::uint64_t>(buf, std::bit_cast<std::uint64_t>(v));
    put_le<std::uint32_t>(buf, crc32_of(buf));

    const auto tmp = std::filesystem::path(path).concat(".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw CheckpointError("cannot write checkpoint " + tmp.string());
        out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        if (!out) throw CheckpointError("short write on " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    const std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const std::size_t header = 8 + 4 + 8;
    if (buf.size() < header || std::memcmp(buf.data(), kMagic, 8) != 0)
        throw CheckpointError(path.string() + " is not a checkpoint file");
    const auto version = get_le<std::uint32_t>(buf.data() + 8);
    if (version != kFormatVersion)
        throw VersionError("checkpoint format version " + std::to_string(version) + " is not readable (this build reads version " +
                           std::to_string(kFormatVersion) + ")");
    if (buf.size() < header + 8 + 4) throw ChecksumError("checkpoint is truncated");
    const std::size_t body = buf.size() - 4;
    if (crc32_of({buf.data(), body}) != get_le<std::uint32_t>(buf.data() + body))
        throw ChecksumError("checkpoint checksum mismatch (truncated or corrupted): " + path.string());

    const auto mlen = get_le<std::uint64_t>(buf.data() + 12);
    if (header + mlen + 8 > body) throw ChecksumError("checkpoint manifest overruns the file");
    const json m = json::parse(buf.begin() + header, buf.begin() + static_cast<std::ptrdiff_t>(header + mlen));
    const std::size_t pstart = header + mlen + 8;
    const auto pcount = get_le<std::uint64_t>(buf.data() + header + mlen);
    if (pstart + pcount * 8 != body) throw ChecksumError("checkpoint payload length does not match the file");
    auto payload_at = [&](std::size_t i) {
        return std::bit_cast<double>(get_le<std::uint64_t>(buf.data() + pstart + 8 * i));
    };
    auto read_tensor = [&](const json& a) {
        Tensor t(a.at("shape").get<Shape>());
        const std::size_t off = a.at("offset").get<std::size_t>();
        if (off + t.numel() > pcount) throw CheckpointError("array " + a.at("name").get<std::string>() + " out of range");
        for (std::size_t i = 0; i < t.numel(); ++i) t[i] = payload_at(off + i);
        return t;
    };

    Checkpoint ck;
    auto& st = ck.state;
    ck.config_hash = m.at("config_hash").get<std::string>();
    st.experts = m.at("experts").get<std::size_t>();
    st.steps_per_week = m.at("steps_per_week").get<std::size_t>();
    st.seed = m.at("seed").get<std::uint64_t>();
    const auto& p = m.at("predictor");
    st.predictor = {p.at("input_steps").get<std::size_t>(), p.at("horizon").get<std::size_t>(),
                    p.at("embed_dim").get<std::size_t>(), p.at("diffusion_steps").get<std::size_t>(),
                    p.at("kernel").get<std::size_t>()};
    st.trained_task = m.at("trained_task").get<int>();
    st.pretrained = m.at("pretrained").get<bool>();
    st.norm = norm_from(m.at("norm"));
    for (const auto& [k, v] : m.at("task_norms").items()) st.task_norms[std::stoi(k)] = norm_from(v);
    st.sg_nodes = m.at("sg_nodes").get<std::vector<data::NodeId>>();
    st.sg_labels = m.at("sg_labels").get<std::vector<int>>();
    const auto& a = m.at("adam");
    st.adam.step = a.at("step").get<long>();
    st.adam.lr = a.at("lr").get<std::array<double, kParamGroupCount>>();
    st.adam.beta1 = a.at("beta1").get<double>();
    st.adam.beta2 = a.at("beta2").get<double>();
    st.adam.eps = a.at("eps").get<double>();
    for (const auto& e : m.at("arrays")) {
        const auto role = e.at("role").get<std::string>();
        const auto name = e.at("name").get<std::string>();
        if (role == "param") {
            std::optional<Bounds> b;
            if (e.contains("bounds")) b = Bounds{e["bounds"][0].get<double>(), e["bounds"][1].get<double>()};
            st.params.add(name, param_group_from_string(e.at("group").get<std::string>()), read_tensor(e), b);
        } else if (role == "adam.m") {
            auto& mo = st.adam.moments[name];
            mo.m = read_tensor(e);
            mo.step = e.at("step").get<long>();
        } else if (role == "adam.v") {
            st.adam.moments[name].v = read_tensor(e);
        } else if (role == "centroids") {
            st.centroids = read_tensor(e);
        } else {
            throw CheckpointError("unknown array role '" + role + "'");
        }
    }
    return ck;
}

}  // namespace tfmoe::ckpt
