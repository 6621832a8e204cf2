#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace gfl {

std::string read_text_file(const std::filesystem::path& path);

// All writes land via temp file + atomic rename so that readers never observe
// a partially written artifact.
void write_text_file_atomic(const std::filesystem::path& path,
                            const std::string& content);
void write_binary_file_atomic(const std::filesystem::path& path,
                              const std::vector<unsigned char>& data);

}  // namespace gfl
