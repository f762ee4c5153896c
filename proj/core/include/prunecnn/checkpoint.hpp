#pragma once

#include <string>

#include "prunecnn/net.hpp"

namespace prunecnn {

// Versioned binary checkpoint: magic, version, config block, parameter
// tensors as little-endian 64-bit floats in declaration order, masks as byte
// vectors, trailing CRC32. Round-trips bit-exactly.

void save_checkpoint(const Network& net, const std::string& path);
Network load_checkpoint(const std::string& path);

/// CRC32 (IEEE, reflected) used by the checkpoint trailer.
std::uint32_t crc32(const unsigned char* data, std::size_t len);

}  // namespace prunecnn
