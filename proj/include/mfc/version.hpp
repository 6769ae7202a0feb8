#pragma once

namespace mfc {
inline constexpr const char* kVersion = "0.1.0";
inline constexpr int kReportSchemaVersion = 1;
}  // namespace mfc
