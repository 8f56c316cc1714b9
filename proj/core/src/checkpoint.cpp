#include "gpsgen/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "gpsgen/hash.hpp"

using json = nlohmann::json;

namespace gpsgen {

namespace {

constexpr char kMagic[8] = {'G', 'P', 'S', 'C', 'K', 'P', 'T', '1'};

struct BlobWriter {
    std::vector<float> blob;
    json index = json::array();

    void add(const std::string& name, const Tensor& t) {
        json e;
        e["name"] = name;
        e["shape"] = t.shape;
        e["offset"] = blob.size();
        index.push_back(e);
        blob.insert(blob.end(), t.data.begin(), t.data.end());
    }
};

}  // namespace

std::string config_hash_hex(const json& config) { return hash_hex(fnv1a64(config.dump())); }

void save_checkpoint(const std::string& path, const CheckpointMeta& meta,
                     const nn::ParamStore& params, nn::AdamW* opt) {
    BlobWriter w;
    for (const auto& [name, var] : params.entries()) w.add(name, var->value);
    json header;
    header["format_version"] = 1;
    header["config"] = meta.config;
    header["config_hash"] = config_hash_hex(meta.config);
    header["step"] = meta.step;
    header["schedule"] = meta.schedule;
    if (opt) {
        size_t i = 0;
        for (const auto& [name, var] : params.entries()) {
            w.add("opt.m/" + name, opt->m()[i]);
            w.add("opt.v/" + name, opt->v()[i]);
            ++i;
        }
        header["opt_step_count"] = opt->step_count();
    }
    header["tensors"] = w.index;

    std::string hs = header.dump();
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError("save_checkpoint: cannot open " + path);
    f.write(kMagic, 8);
    uint64_t hlen = hs.size();
    f.write(reinterpret_cast<const char*>(&hlen), 8);
    f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    f.write(reinterpret_cast<const char*>(w.blob.data()),
            static_cast<std::streamsize>(w.blob.size() * sizeof(float)));
    if (!f) throw CheckpointError("save_checkpoint: write failed for " + path);
}

namespace {

json read_header(std::ifstream& f, const std::string& path, uint64_t* blob_offset) {
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kMagic, 8) != 0)
        throw CheckpointError("checkpoint: bad magic in " + path);
    uint64_t hlen = 0;
    f.read(reinterpret_cast<char*>(&hlen), 8);
    if (!f || hlen == 0 || hlen > (1ull << 30))
        throw CheckpointError("checkpoint: corrupt header length in " + path);
    std::string hs(hlen, '\0');
    f.read(hs.data(), static_cast<std::streamsize>(hlen));
    if (!f) throw CheckpointError("checkpoint: truncated header in " + path);
    *blob_offset = 16 + hlen;
    json header;
    try {
        header = json::parse(hs);
    } catch (const json::exception&) {
        throw CheckpointError("checkpoint: corrupt header JSON in " + path);
    }
    if (header.value("format_version", 0) != 1)
        throw CheckpointError("checkpoint: unsupported format version in " + path);
    if (header.contains("config") &&
        header.value("config_hash", "") != config_hash_hex(header["config"]))
        throw CheckpointError("checkpoint: config hash mismatch (corrupt?) in " + path);
    return header;
}

CheckpointMeta meta_from_header(const json& header) {
    CheckpointMeta meta;
    meta.config = header.value("config", json::object());
    meta.config_hash = header.value("config_hash", "");
    meta.step = header.value("step", int64_t{0});
    meta.schedule = header.value("schedule", json::object());
    return meta;
}

}  // namespace

CheckpointMeta peek_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("peek_checkpoint: cannot open " + path);
    uint64_t off = 0;
    return meta_from_header(read_header(f, path, &off));
}

CheckpointMeta load_checkpoint(const std::string& path, nn::ParamStore& params, nn::AdamW* opt) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("load_checkpoint: cannot open " + path);
    uint64_t blob_offset = 0;
    json header = read_header(f, path, &blob_offset);

    f.seekg(0, std::ios::end);
    uint64_t file_size = static_cast<uint64_t>(f.tellg());
    uint64_t blob_floats = (file_size - blob_offset) / sizeof(float);

    auto read_tensor = [&](const json& e, Tensor& dst, const std::string& name) {
        std::vector<int> shape = e.at("shape").get<std::vector<int>>();
        uint64_t offset = e.at("offset");
        int64_t n = Tensor::numel(shape);
        if (offset + static_cast<uint64_t>(n) > blob_floats)
            throw CheckpointError("load_checkpoint: tensor '" + name + "' extends past blob");
        if (dst.shape != shape)
            throw CheckpointError("load_checkpoint: shape mismatch for '" + name + "'");
        f.seekg(static_cast<std::streamoff>(blob_offset + offset * sizeof(float)));
        f.read(reinterpret_cast<char*>(dst.data.data()),
               static_cast<std::streamsize>(n * sizeof(float)));
        if (!f) throw CheckpointError("load_checkpoint: truncated blob reading '" + name + "'");
    };

    std::map<std::string, const json*> by_name;
    for (const auto& e : header.at("tensors")) by_name[e.at("name")] = &e;

    size_t idx = 0;
    for (const auto& [name, var] : params.entries()) {
        auto it = by_name.find(name);
        if (it == by_name.end())
            throw CheckpointError("load_checkpoint: missing parameter '" + name + "'");
        read_tensor(*it->second, var->value, name);
        if (opt) {
            auto im = by_name.find("opt.m/" + name);
            auto iv = by_name.find("opt.v/" + name);
            if (im != by_name.end() && iv != by_name.end()) {
                read_tensor(*im->second, opt->m()[idx], name);
                read_tensor(*iv->second, opt->v()[idx], name);
            }
        }
        ++idx;
    }
    if (opt && header.contains("opt_step_count"))
        opt->set_step_count(header["opt_step_count"].get<int64_t>());
    return meta_from_header(header);
}

uint64_t param_hash(const nn::ParamStore& params) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& [name, var] : params.entries()) {
        h = fnv1a64(name.data(), name.size(), h);
        h = fnv1a64(var->value.data.data(), var->value.data.size() * sizeof(float), h);
    }
    return h;
}

}  // namespace gpsgen
