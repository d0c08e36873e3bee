#include "demseg/miv_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace demseg {

namespace {

constexpr char kMagic[] = {'M', 'I', 'V', '1', '\n'};

std::string header_line(const Shape3& shape, const Spacing& spacing, const char* dtype) {
    nlohmann::ordered_json h;
    h["shape"] = {shape.z, shape.y, shape.x};
    h["spacing"] = {spacing.dz, spacing.dy, spacing.dx};
    h["dtype"] = dtype;
    return h.dump();
}

void write_bytes(const std::filesystem::path& path, const std::string& header,
                 const char* payload, std::size_t payload_size) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw MivError("cannot open for writing: " + path.string());
    out.write(kMagic, sizeof(kMagic));
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    out.put('\n');
    out.write(payload, static_cast<std::streamsize>(payload_size));
    out.flush();
    if (!out)
        throw MivError("write failed: " + path.string());
}

struct RawFile {
    std::string bytes;
    std::size_t payload_offset = 0;
    Shape3 shape;
    Spacing spacing;
    std::string dtype;
};

RawFile parse_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw MivError("cannot open: " + path.string());
    RawFile f;
    f.bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    if (f.bytes.size() < sizeof(kMagic) ||
        std::memcmp(f.bytes.data(), kMagic, sizeof(kMagic)) != 0)
        throw MivError("not a MIV file (bad magic): " + path.string());

    const std::size_t header_start = sizeof(kMagic);
    const std::size_t header_end = f.bytes.find('\n', header_start);
    if (header_end == std::string::npos)
        throw MivError("unterminated header line: " + path.string());
    const std::string header = f.bytes.substr(header_start, header_end - header_start);
    f.payload_offset = header_end + 1;

    nlohmann::json h;
    try {
        h = nlohmann::json::parse(header);
    } catch (const nlohmann::json::exception& e) {
        throw MivError("malformed header JSON in " + path.string() + ": " + e.what());
    }
    try {
        const auto& shape = h.at("shape");
        const auto& spacing = h.at("spacing");
        if (!shape.is_array() || shape.size() != 3 ||
            !spacing.is_array() || spacing.size() != 3)
            throw MivError("header shape/spacing must be 3-element arrays: " + path.string());
        f.shape = Shape3{shape[0].get<int>(), shape[1].get<int>(), shape[2].get<int>()};
        f.spacing = Spacing{spacing[0].get<double>(), spacing[1].get<double>(),
                            spacing[2].get<double>()};
        f.dtype = h.at("dtype").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw MivError("invalid header fields in " + path.string() + ": " + e.what());
    }
    if (f.shape.z <= 0 || f.shape.y <= 0 || f.shape.x <= 0)
        throw MivError("non-positive shape in header: " + path.string());
    if (!f.spacing.valid())
        throw MivError("invalid spacing in header: " + path.string());
    if (f.dtype != "f32" && f.dtype != "u8")
        throw MivError("unknown dtype '" + f.dtype + "': " + path.string());
    return f;
}

void check_payload_size(const RawFile& f, std::size_t elem_size,
                        const std::filesystem::path& path) {
    const std::size_t expect = f.shape.count() * elem_size;
    const std::size_t have = f.bytes.size() - f.payload_offset;
    if (have != expect)
        throw MivError("payload length mismatch in " + path.string() + ": expected " +
                       std::to_string(expect) + " bytes, found " + std::to_string(have));
}

}  // namespace

MivGrid read_miv(const std::filesystem::path& path) {
    const RawFile f = parse_file(path);
    if (f.dtype == "f32") {
        check_payload_size(f, 4, path);
        Volume v;
        v.shape = f.shape;
        v.spacing = f.spacing;
        v.data.resize(f.shape.count());
        const char* p = f.bytes.data() + f.payload_offset;
        for (std::size_t i = 0; i < v.data.size(); ++i) {
            std::uint32_t u = static_cast<std::uint8_t>(p[4 * i]) |
                              static_cast<std::uint32_t>(static_cast<std::uint8_t>(p[4 * i + 1])) << 8 |
                              static_cast<std::uint32_t>(static_cast<std::uint8_t>(p[4 * i + 2])) << 16 |
                              static_cast<std::uint32_t>(static_cast<std::uint8_t>(p[4 * i + 3])) << 24;
            v.data[i] = std::bit_cast<float>(u);
        }
        try {
            validate(v);
        } catch (const std::invalid_argument& e) {
            throw MivError(path.string() + ": " + e.what());
        }
        return v;
    }
    check_payload_size(f, 1, path);
    LabelMap m;
    m.shape = f.shape;
    m.spacing = f.spacing;
    const char* p = f.bytes.data() + f.payload_offset;
    m.data.assign(reinterpret_cast<const std::uint8_t*>(p),
                  reinterpret_cast<const std::uint8_t*>(p) + f.shape.count());
    try {
        validate(m);
    } catch (const std::invalid_argument& e) {
        throw MivError(path.string() + ": " + e.what());
    }
    return m;
}

Volume read_miv_volume(const std::filesystem::path& path) {
    MivGrid g = read_miv(path);
    if (auto* v = std::get_if<Volume>(&g))
        return std::move(*v);
    throw MivError("expected f32 image, found u8 labels: " + path.string());
}

LabelMap read_miv_labels(const std::filesystem::path& path) {
    MivGrid g = read_miv(path);
    if (auto* m = std::get_if<LabelMap>(&g))
        return std::move(*m);
    throw MivError("expected u8 labels, found f32 image: " + path.string());
}

void write_miv(const Volume& v, const std::filesystem::path& path) {
    validate(v);
    std::string payload(v.data.size() * 4, '\0');
    for (std::size_t i = 0; i < v.data.size(); ++i) {
        const std::uint32_t u = std::bit_cast<std::uint32_t>(v.data[i]);
        payload[4 * i] = static_cast<char>(u & 0xFF);
        payload[4 * i + 1] = static_cast<char>((u >> 8) & 0xFF);
        payload[4 * i + 2] = static_cast<char>((u >> 16) & 0xFF);
        payload[4 * i + 3] = static_cast<char>((u >> 24) & 0xFF);
    }
    write_bytes(path, header_line(v.shape, v.spacing, "f32"), payload.data(), payload.size());
}

void write_miv(const LabelMap& m, const std::filesystem::path& path) {
    validate(m);
    write_bytes(path, header_line(m.shape, m.spacing, "u8"),
                reinterpret_cast<const char*>(m.data.data()), m.data.size());
}

}  // namespace demseg
