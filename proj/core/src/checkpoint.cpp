#include "refocus/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <stdexcept>
#include <vector>

namespace refocus::ckpt {

using nlohmann::json;
using policy::PolicyParams;

void save_checkpoint(const PolicyParams& p, const std::string& prefix) {
    auto bs = policy::blocks(p);
    json manifest;
    manifest["dtype"] = "f64";
    manifest["dims"] = {{"d_in", p.dims.d_in},
                        {"d_e", p.dims.d_e},
                        {"d_model", p.dims.d_model},
                        {"d_g", p.dims.d_g},
                        {"d_q", p.dims.d_q}};
    json tensors = json::array();
    std::size_t offset = 0;
    std::ofstream blob(prefix + ".bin", std::ios::binary | std::ios::trunc);
    if (!blob) throw std::runtime_error("save_checkpoint: cannot open " + prefix + ".bin");
    for (const auto& b : bs) {
        tensors.push_back({{"name", b.name},
                           {"shape", {b.rows, b.cols}},
                           {"dtype", "f64"},
                           {"byte_offset", offset}});
        blob.write(reinterpret_cast<const char*>(b.data),
                   static_cast<std::streamsize>(b.size() * sizeof(double)));
        offset += b.size() * sizeof(double);
    }
    manifest["tensors"] = std::move(tensors);
    manifest["total_bytes"] = offset;
    std::ofstream mf(prefix + ".json", std::ios::trunc);
    if (!mf) throw std::runtime_error("save_checkpoint: cannot open " + prefix + ".json");
    mf << manifest.dump(2) << "\n";
}

PolicyParams load_checkpoint(const std::string& prefix) {
    std::ifstream mf(prefix + ".json");
    if (!mf) throw std::runtime_error("load_checkpoint: cannot open " + prefix + ".json");
    json manifest = json::parse(mf);
    policy::Dims d;
    const json& jd = manifest.at("dims");
    d.d_in = jd.at("d_in").get<int>();
    d.d_e = jd.at("d_e").get<int>();
    d.d_model = jd.at("d_model").get<int>();
    d.d_g = jd.at("d_g").get<int>();
    d.d_q = jd.at("d_q").get<int>();
    PolicyParams p = PolicyParams::zeros(d);

    std::ifstream blob(prefix + ".bin", std::ios::binary);
    if (!blob) throw std::runtime_error("load_checkpoint: cannot open " + prefix + ".bin");
    std::vector<char> bytes((std::istreambuf_iterator<char>(blob)),
                            std::istreambuf_iterator<char>());

    auto bs = policy::blocks(p);
    for (const json& t : manifest.at("tensors")) {
        const std::string name = t.at("name").get<std::string>();
        auto it = std::find_if(bs.begin(), bs.end(),
                               [&](const policy::BlockRef& b) { return b.name == name; });
        if (it == bs.end()) throw std::runtime_error("load_checkpoint: unknown tensor " + name);
        const auto shape = t.at("shape").get<std::vector<long>>();
        if (shape.size() != 2 || shape[0] != it->rows || shape[1] != it->cols)
            throw std::runtime_error("load_checkpoint: shape mismatch for " + name);
        const std::size_t off = t.at("byte_offset").get<std::size_t>();
        const std::size_t nbytes = it->size() * sizeof(double);
        if (off + nbytes > bytes.size())
            throw std::runtime_error("load_checkpoint: blob too short for " + name);
        std::memcpy(it->data, bytes.data() + off, nbytes);
    }
    return p;
}

}  // namespace refocus::ckpt
