#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "teethseg/image.hpp"

namespace teethseg {

// Binary PGM ("P5", maxval 255). Images round to 8 bits; masks are stored
// raw (labels 0..32 fit trivially).
struct PgmData {
    int width = 0, height = 0;
    std::vector<std::uint8_t> bytes;
};

void write_pgm(const std::string& path, const PgmData& pgm);
PgmData read_pgm(const std::string& path);  // rejects malformed input naming the byte offset

PgmData from_gray(const GrayImage& img);
GrayImage to_gray(const PgmData& pgm);
PgmData from_mask(const LabelMask& mask);
LabelMask to_mask(const PgmData& pgm);

void write_pgm(const std::string& path, const GrayImage& img);
void write_pgm(const std::string& path, const LabelMask& mask);
GrayImage read_pgm_image(const std::string& path);
LabelMask read_pgm_mask(const std::string& path);

}  // namespace teethseg
