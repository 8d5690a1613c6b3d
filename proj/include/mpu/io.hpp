#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include "mpu/errors.hpp"

namespace mpu {

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MpuError(ErrCode::IoError, "cannot read " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

inline void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw MpuError(ErrCode::IoError, "cannot write " + path);
    out << content;
    if (!out) throw MpuError(ErrCode::IoError, "short write to " + path);
}

}  // namespace mpu
