#ifndef DLSN_CLI_HPP
#define DLSN_CLI_HPP

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "dlsn/tensor.hpp"

namespace dlsn {

// Feature file: "FMAP", u32 c, u32 h, u32 w, then c*h*w little-endian
// float32 values in (c, y, x) order.
std::vector<std::uint8_t> encode_fmap(const FeatureMap& map);
FeatureMap decode_fmap(const std::vector<std::uint8_t>& bytes);
void save_fmap(const std::filesystem::path& path, const FeatureMap& map);
FeatureMap load_fmap(const std::filesystem::path& path);

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

/// Runs one subcommand. `args` excludes the program name. Machine-readable
/// output goes to `out`, diagnostics and usage text to `err`.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dlsn

#endif  // DLSN_CLI_HPP
