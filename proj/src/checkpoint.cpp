// Copyright (c) 2026, the moce authors
// SPDX-License-Identifier: Apache-2.0

#include "moce/checkpoint.hpp"

#include "moce/error.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace moce {

namespace {

constexpr char kMagic[8] = {'M', 'O', 'C', 'E', 'P', 'R', 'M', '1'};

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

void put_u64(std::ostream& os, std::uint64_t v)
{
    unsigned char b[8];
    for (int i = 0; i < 8; ++i)
        b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(std::istream& is, const std::string& path)
{
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8))
        throw FormatError("parameters: " + path + " is truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
        v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

} // namespace

void write_parameters(const std::string& path, const NamedTensors& tensors)
{
    std::ofstream os(path, std::ios::binary);
    if (!os)
        throw FormatError("parameters: cannot write " + path);
    os.write(kMagic, sizeof(kMagic));
    put_u64(os, tensors.size());
    for (const auto& [name, t] : tensors) {
        put_u64(os, name.size());
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u64(os, t.rank());
        for (std::size_t d : t.shape())
            put_u64(os, d);
    }
    for (const auto& [name, t] : tensors)
        for (double v : t.values())
            put_u64(os, std::bit_cast<std::uint64_t>(v));
    if (!os)
        throw FormatError("parameters: write to " + path + " failed");
}

void read_parameters(const std::string& path, const NamedTensors& tensors)
{
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw FormatError("parameters: cannot open " + path);
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
        throw FormatError("parameters: " + path + " is not a parameter file");
    const std::uint64_t count = get_u64(is, path);
    if (count != tensors.size())
        throw FormatError("parameters: " + path + " holds " + std::to_string(count) +
                          " tensors, model expects " + std::to_string(tensors.size()));
    for (const auto& [name, t] : tensors) {
        const std::uint64_t len = get_u64(is, path);
        if (len > 4096)
            throw FormatError("parameters: implausible name length in " + path);
        std::string stored(len, '\0');
        if (!is.read(stored.data(), static_cast<std::streamsize>(len)))
            throw FormatError("parameters: " + path + " is truncated");
        if (stored != name)
            throw FormatError("parameters: expected tensor '" + name + "', found '" + stored + "'");
        const std::uint64_t rank = get_u64(is, path);
        Shape shape;
        for (std::uint64_t i = 0; i < rank && i < 8; ++i)
            shape.push_back(get_u64(is, path));
        if (shape != t.shape())
            throw FormatError("parameters: '" + name + "' stored as " + to_string(shape) +
                              ", model expects " + to_string(t.shape()));
    }
    for (const auto& [name, t] : tensors) {
        Tensor dst = t;
        for (double& v : dst.values())
            v = std::bit_cast<double>(get_u64(is, path));
    }
    if (is.peek() != std::char_traits<char>::eof())
        throw FormatError("parameters: trailing bytes in " + path);
}

void save_checkpoint(const std::string& dir, const MoceModel& model, const KeyValues& meta)
{
    std::filesystem::create_directories(dir);
    KeyValues manifest = meta;
    manifest["format"] = kCheckpointFormat;
    manifest["parameters"] = "parameters.bin";
    for (const auto& [k, v] : model.config().to_map())
        manifest["model." + k] = v;
    std::ofstream os(dir + "/manifest.txt");
    if (!os)
        throw FormatError("checkpoint: cannot write " + dir + "/manifest.txt");
    write_key_values(os, manifest);
    write_parameters(dir + "/parameters.bin", model.named_parameters());
}

Checkpoint load_checkpoint(const std::string& dir)
{
    std::ifstream is(dir + "/manifest.txt");
    if (!is)
        throw FormatError("checkpoint: cannot open " + dir + "/manifest.txt");
    const KeyValues manifest = read_key_values(is, dir + "/manifest.txt");
    const auto format = manifest.find("format");
    if (format == manifest.end() || format->second != kCheckpointFormat)
        throw FormatError("checkpoint: " + dir + " has an unsupported format");
    KeyValues model_kv, meta;
    for (const auto& [k, v] : manifest) {
        if (k.rfind("model.", 0) == 0)
            model_kv[k.substr(6)] = v;
        else
            meta[k] = v;
    }
    const auto params = meta.find("parameters");
    if (params == meta.end())
        throw FormatError("checkpoint: manifest in " + dir + " names no parameter file");
    Checkpoint ck{MoceModel::skeleton(ModelConfig::from_map(model_kv)), meta};
    read_parameters(dir + "/" + params->second, ck.model.named_parameters());
    return ck;
}

} // namespace moce
