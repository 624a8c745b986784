#pragma once

#include "deepbv/errors.hpp"
#include "deepbv/nets.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace deepbv {

/// DBVW layout: "DBVW", u16 version, u32 table length, the layer table, then
/// every parameter and buffer as little-endian f32 in table order.
std::vector<std::uint8_t> encode_checkpoint(const Net& net);
Net decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const Net& net, const std::string& path);
Net load_checkpoint(const std::string& path);

/// Whole-file helpers shared with the volume container.
std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes);

}  // namespace deepbv
