#pragma once

#include <string_view>

// Prompt templates shipped under assets/prompts/ and embedded at configure
// time so the library stays self-contained.
namespace erl::prompts {

std::string_view grid_system();
std::string_view qa_system();
std::string_view grid_reflection();
std::string_view qa_reflection();
std::string_view retry_generic();

}  // namespace erl::prompts
