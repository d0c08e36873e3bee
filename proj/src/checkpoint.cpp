#include "demseg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"

#include "demseg/miv_io.hpp"

namespace demseg {

namespace {

constexpr char kMagic[] = {'M', 'I', 'V', 'P', '\n'};

nlohmann::ordered_json config_json(const UNetConfig& c) {
    nlohmann::ordered_json j;
    j["in_channels"] = c.in_channels;
    j["num_classes"] = c.num_classes;
    j["depth"] = c.depth;
    j["base_channels"] = c.base_channels;
    j["negative_slope"] = c.negative_slope;
    j["norm_epsilon"] = c.norm_epsilon;
    return j;
}

UNetConfig config_from_json(const nlohmann::json& j) {
    UNetConfig c;
    c.in_channels = j.at("in_channels").get<int>();
    c.num_classes = j.at("num_classes").get<int>();
    c.depth = j.at("depth").get<int>();
    c.base_channels = j.at("base_channels").get<int>();
    c.negative_slope = j.at("negative_slope").get<double>();
    c.norm_epsilon = j.at("norm_epsilon").get<double>();
    return c;
}

}  // namespace

void save_checkpoint(const UNetParams& params, const std::filesystem::path& path) {
    nlohmann::ordered_json manifest;
    manifest["config"] = config_json(params.config);
    auto& tensors = manifest["tensors"] = nlohmann::ordered_json::array();
    std::string payload;
    params.for_each_array([&](const std::string& name, const std::vector<double>& data,
                              const std::vector<int>& shape) {
        nlohmann::ordered_json t;
        t["name"] = name;
        t["shape"] = shape;
        tensors.push_back(std::move(t));
        for (double d : data) {
            const std::uint32_t u = std::bit_cast<std::uint32_t>(static_cast<float>(d));
            payload.push_back(static_cast<char>(u & 0xFF));
            payload.push_back(static_cast<char>((u >> 8) & 0xFF));
            payload.push_back(static_cast<char>((u >> 16) & 0xFF));
            payload.push_back(static_cast<char>((u >> 24) & 0xFF));
        }
    });
    const std::string header = manifest.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw MivError("cannot open checkpoint for writing: " + path.string());
    out.write(kMagic, sizeof(kMagic));
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    out.put('\n');
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    out.flush();
    if (!out)
        throw MivError("checkpoint write failed: " + path.string());
}

UNetParams load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw MivError("cannot open checkpoint: " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
        throw MivError("not a checkpoint file (bad magic): " + path.string());
    const std::size_t header_end = bytes.find('\n', sizeof(kMagic));
    if (header_end == std::string::npos)
        throw MivError("unterminated checkpoint manifest: " + path.string());

    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(bytes.substr(sizeof(kMagic), header_end - sizeof(kMagic)));
    } catch (const nlohmann::json::exception& e) {
        throw MivError("malformed checkpoint manifest in " + path.string() + ": " + e.what());
    }

    UNetParams params;
    try {
        params = zero_params(config_from_json(manifest.at("config")));
    } catch (const std::exception& e) {
        throw MivError("invalid checkpoint config in " + path.string() + ": " + e.what());
    }

    const auto& tensors = manifest.at("tensors");
    std::size_t offset = header_end + 1;
    std::size_t idx = 0;
    try {
        params.for_each_array([&](const std::string& name, std::vector<double>& data,
                                  const std::vector<int>& shape) {
            if (idx >= tensors.size())
                throw MivError("checkpoint manifest is missing tensors: " + path.string());
            const auto& t = tensors.at(idx++);
            if (t.at("name").get<std::string>() != name ||
                t.at("shape").get<std::vector<int>>() != shape)
                throw MivError("checkpoint tensor '" + name + "' does not match the architecture: " +
                               path.string());
            const std::size_t need = data.size() * 4;
            if (offset + need > bytes.size())
                throw MivError("checkpoint payload truncated: " + path.string());
            const char* p = bytes.data() + offset;
            for (std::size_t i = 0; i < data.size(); ++i) {
                const std::uint32_t u =
                    static_cast<std::uint8_t>(p[4 * i]) |
                    static_cast<std::uint32_t>(static_cast<std::uint8_t>(p[4 * i + 1])) << 8 |
                    static_cast<std::uint32_t>(static_cast<std::uint8_t>(p[4 * i + 2])) << 16 |
                    static_cast<std::uint32_t>(static_cast<std::uint8_t>(p[4 * i + 3])) << 24;
                data[i] = static_cast<double>(std::bit_cast<float>(u));
            }
            offset += need;
        });
    } catch (const nlohmann::json::exception& e) {
        throw MivError("invalid checkpoint tensor entry in " + path.string() + ": " + e.what());
    }
    if (idx != tensors.size())
        throw MivError("checkpoint manifest lists extra tensors: " + path.string());
    if (offset != bytes.size())
        throw MivError("checkpoint has trailing bytes: " + path.string());
    return params;
}

}  // namespace demseg
