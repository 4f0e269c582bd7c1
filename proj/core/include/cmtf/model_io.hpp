#pragma once

#include <filesystem>

#include "cmtf/tucker.hpp"

namespace cmtf {

/// Plain-text model dump: a "CORE" section (ranks line, then row-major
/// values), one "FACTOR n" section per mode (rows/cols line, then values)
/// and one "COUPLED c" section per coupled factor, written with 17
/// significant digits. CP cores are written densely.
void save_model(const std::filesystem::path& path, const FactorModel& model);

FactorModel load_model(const std::filesystem::path& path);

}  // namespace cmtf
