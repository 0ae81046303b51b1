#include "teethseg/pgm.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "teethseg/tensor.hpp"

namespace teethseg {

namespace {

[[noreturn]] void reject(const std::string& path, std::size_t offset, const std::string& what) {
    throw std::runtime_error("pgm: " + path + ": " + what + " (byte offset " + std::to_string(offset) + ")");
}

// Reads one whitespace-delimited decimal token, advancing `pos`.
long parse_int(const std::string& path, const std::vector<char>& buf, std::size_t& pos) {
    while (pos < buf.size() && std::isspace(static_cast<unsigned char>(buf[pos]))) ++pos;
    if (pos >= buf.size() || !std::isdigit(static_cast<unsigned char>(buf[pos])))
        reject(path, pos, "expected a decimal header field");
    long v = 0;
    while (pos < buf.size() && std::isdigit(static_cast<unsigned char>(buf[pos]))) {
        v = v * 10 + (buf[pos] - '0');
        if (v > 1 << 20) reject(path, pos, "header field out of range");
        ++pos;
    }
    return v;
}

}  // namespace

void write_pgm(const std::string& path, const PgmData& pgm) {
    if (pgm.width < 1 || pgm.height < 1 ||
        pgm.bytes.size() != static_cast<std::size_t>(pgm.width) * static_cast<std::size_t>(pgm.height))
        fail("pgm: inconsistent raster for '" + path + "'");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("pgm: cannot open '" + path + "' for writing");
    f << "P5\n" << pgm.width << ' ' << pgm.height << "\n255\n";
    f.write(reinterpret_cast<const char*>(pgm.bytes.data()), static_cast<std::streamsize>(pgm.bytes.size()));
    if (!f) throw std::runtime_error("pgm: short write to '" + path + "'");
}

PgmData read_pgm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("pgm: cannot open '" + path + "'");
    std::vector<char> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    std::size_t pos = 0;
    if (buf.size() < 2 || buf[0] != 'P' || buf[1] != '5') {
        const std::string magic(buf.begin(), buf.begin() + std::min<std::size_t>(2, buf.size()));
        reject(path, 0, "bad magic '" + magic + "', expected 'P5'");
    }
    pos = 2;
    const long w = parse_int(path, buf, pos);
    const long h = parse_int(path, buf, pos);
    const long maxval = parse_int(path, buf, pos);
    if (maxval != 255) reject(path, pos, "maxval " + std::to_string(maxval) + ", expected 255");
    if (pos >= buf.size() || !std::isspace(static_cast<unsigned char>(buf[pos])))
        reject(path, pos, "missing whitespace after maxval");
    ++pos;  // exactly one whitespace byte before the payload
    const std::size_t expect = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
    if (buf.size() - pos < expect)
        reject(path, buf.size(),
               "truncated payload: expected " + std::to_string(expect) + " bytes, got " +
                   std::to_string(buf.size() - pos));
    PgmData out;
    out.width = static_cast<int>(w);
    out.height = static_cast<int>(h);
    out.bytes.assign(buf.begin() + static_cast<std::ptrdiff_t>(pos),
                     buf.begin() + static_cast<std::ptrdiff_t>(pos + expect));
    return out;
}

PgmData from_gray(const GrayImage& img) {
    PgmData p;
    p.width = img.width;
    p.height = img.height;
    p.bytes.resize(img.size());
    for (std::size_t i = 0; i < img.size(); ++i) {
        const double v = std::clamp(img.v[i], 0.0, 255.0);
        p.bytes[i] = static_cast<std::uint8_t>(std::lround(v));
    }
    return p;
}

GrayImage to_gray(const PgmData& pgm) {
    GrayImage img(pgm.width, pgm.height);
    for (std::size_t i = 0; i < pgm.bytes.size(); ++i) img.v[i] = static_cast<double>(pgm.bytes[i]);
    return img;
}

PgmData from_mask(const LabelMask& mask) {
    PgmData p;
    p.width = mask.width;
    p.height = mask.height;
    p.bytes = mask.v;
    return p;
}

LabelMask to_mask(const PgmData& pgm) {
    LabelMask m;
    m.width = pgm.width;
    m.height = pgm.height;
    m.v = pgm.bytes;
    return m;
}

void write_pgm(const std::string& path, const GrayImage& img) { write_pgm(path, from_gray(img)); }
void write_pgm(const std::string& path, const LabelMask& mask) { write_pgm(path, from_mask(mask)); }
GrayImage read_pgm_image(const std::string& path) { return to_gray(read_pgm(path)); }
LabelMask read_pgm_mask(const std::string& path) { return to_mask(read_pgm(path)); }

}  // namespace teethseg
