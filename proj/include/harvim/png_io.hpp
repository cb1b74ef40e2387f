#pragma once

#include <string>

#include "harvim/tensor.hpp"

namespace harvim {

/// Decodes an 8-bit PNG into a [height, width] tensor with pixels in
/// [0,1] (v / 255). Color inputs are converted with luma weights
/// 0.299 / 0.587 / 0.114; alpha is ignored. 16-bit, palette, and
/// interlaced files are rejected with IoError.
Tensor load_png(const std::string& path);

/// Writes a grayscale 8-bit PNG. Accepts [h,w] or a flattened square
/// image; values are clamped to [0,1] and rounded half-to-even to
/// 0..255. The write goes through a temp file renamed into place.
void save_png(const std::string& path, const Tensor& image);

}  // namespace harvim
