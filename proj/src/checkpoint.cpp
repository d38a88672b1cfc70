#include "metamix/checkpoint.hpp"

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace metamix {

namespace {

bool host_is_little_endian() {
    const std::uint16_t probe = 0x1;
    unsigned char b;
    std::memcpy(&b, &probe, 1);
    return b == 1;
}

void write_doubles_le(std::ofstream& out, const std::vector<double>& v) {
    if (host_is_little_endian()) {
        out.write(reinterpret_cast<const char*>(v.data()),
                  static_cast<std::streamsize>(v.size() * sizeof(double)));
        return;
    }
    for (double d : v) {
        unsigned char bytes[sizeof(double)];
        std::memcpy(bytes, &d, sizeof(double));
        std::reverse(bytes, bytes + sizeof(double));
        out.write(reinterpret_cast<const char*>(bytes), sizeof(double));
    }
}

void read_doubles_le(std::ifstream& in, std::vector<double>& v, const std::string& path) {
    in.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
    if (in.gcount() != static_cast<std::streamsize>(v.size() * sizeof(double))) {
        throw CheckpointError("truncated payload in " + path);
    }
    if (!host_is_little_endian()) {
        for (double& d : v) {
            unsigned char bytes[sizeof(double)];
            std::memcpy(bytes, &d, sizeof(double));
            std::reverse(bytes, bytes + sizeof(double));
            std::memcpy(&d, bytes, sizeof(double));
        }
    }
}

}  // namespace

void save_checkpoint(const ParamSet& p, const std::string& path) {
    if (p.layers.empty()) throw ShapeError("refusing to save an empty ParamSet");
    nlohmann::json header;
    header["format"] = "paramset";
    header["version"] = 1;
    header["endianness"] = "little";
    nlohmann::json layers = nlohmann::json::array();
    for (const LayerTensor& l : p.layers) {
        layers.push_back({{"name", l.name},
                          {"in", l.in_dim},
                          {"out", l.out_dim},
                          {"act", l.activation == Activation::relu ? "relu" : "identity"}});
    }
    header["layers"] = std::move(layers);

    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp + " for writing");
        out << header.dump() << '\n';
        for (const LayerTensor& l : p.layers) {
            write_doubles_le(out, l.weights);
            write_doubles_le(out, l.bias);
        }
        if (!out) throw IoError("write failed for " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move " + tmp + " to " + path + ": " + ec.message());
}

ParamSet load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::string header_line;
    if (!std::getline(in, header_line)) {
        throw CheckpointError("missing header in " + path);
    }
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_line);
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError("bad header in " + path + ": " + e.what());
    }
    if (header.value("format", "") != "paramset") {
        throw CheckpointError("not a paramset checkpoint: " + path);
    }
    if (header.value("endianness", "") != "little") {
        throw CheckpointError("unsupported endianness tag in " + path);
    }

    ParamSet p;
    if (!header.contains("layers") || !header["layers"].is_array() ||
        header["layers"].empty()) {
        throw CheckpointError("header of " + path + " lists no layers");
    }
    for (const auto& jl : header["layers"]) {
        LayerTensor l;
        std::string act;
        try {
            l.name = jl.at("name").get<std::string>();
            l.in_dim = jl.at("in").get<int>();
            l.out_dim = jl.at("out").get<int>();
            act = jl.at("act").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw CheckpointError("bad layer entry in " + path + ": " + e.what());
        }
        if (act == "relu") {
            l.activation = Activation::relu;
        } else if (act == "identity") {
            l.activation = Activation::identity;
        } else {
            throw CheckpointError("unknown activation '" + act + "' in " + path);
        }
        if (l.in_dim < 1 || l.out_dim < 1) {
            throw CheckpointError("non-positive layer shape in " + path);
        }
        l.weights.resize(static_cast<std::size_t>(l.out_dim) * l.in_dim);
        l.bias.resize(static_cast<std::size_t>(l.out_dim));
        read_doubles_le(in, l.weights, path);
        read_doubles_le(in, l.bias, path);
        p.layers.push_back(std::move(l));
    }
    // Any trailing bytes mean the header lied about the shapes.
    char extra;
    in.read(&extra, 1);
    if (in.gcount() != 0) {
        throw CheckpointError("payload longer than header describes in " + path);
    }
    if (!all_finite(p)) throw CheckpointError("non-finite parameter in " + path);
    return p;
}

}  // namespace metamix
