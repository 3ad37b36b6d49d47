#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace aman {

// Writes `content` to a sibling temp file and renames it over `path`, so a
// reader never observes a truncated file.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

std::string read_file(const std::filesystem::path& path);

// Calls `fn(line, line_number)` for each non-blank line; line numbers start at 1.
void for_each_line(const std::filesystem::path& path,
                   const std::function<void(const std::string&, std::size_t)>& fn);

}  // namespace aman
