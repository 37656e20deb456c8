// Copyright 2026 The ovseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "ovseg/image_io.hpp"

#include "ovseg/named_arrays.hpp"

#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cctype>

namespace ovseg {

namespace {

bool is_raster(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp";
}

}  // namespace

Image load_image(const std::filesystem::path& path, const std::string& image_id) {
  Image img;
  img.image_id = image_id.empty() ? path.stem().string() : image_id;
  if (is_raster(path)) {
    const cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (bgr.empty()) throw ParseError("cannot decode image '" + path.string() + "'");
    img.height = bgr.rows;
    img.width = bgr.cols;
    img.channels = 3;
    img.data.resize(static_cast<std::size_t>(img.height) * img.width * 3);
    for (int y = 0; y < bgr.rows; ++y)
      for (int x = 0; x < bgr.cols; ++x) {
        const auto& px = bgr.at<cv::Vec3b>(y, x);
        for (int c = 0; c < 3; ++c) img.at(y, x, c) = px[2 - c] / 255.0f;
      }
    return img;
  }
  const NamedArrays arrays = NamedArrays::load(path);
  const NamedArray& px = arrays.get("pixels");
  if (px.shape.size() != 3) throw ParseError("'" + path.string() + "': pixels must be [H, W, C]");
  img.height = static_cast<int>(px.shape[0]);
  img.width = static_cast<int>(px.shape[1]);
  img.channels = static_cast<int>(px.shape[2]);
  img.data = px.values;
  return img;
}

void save_image_tensor(const std::filesystem::path& path, const Image& image) {
  NamedArrays arrays;
  arrays.put("pixels", NamedArray{{image.height, image.width, image.channels}, image.data});
  arrays.save(path);
}

LabelImage load_mask(const std::filesystem::path& path) {
  LabelImage mask;
  if (is_raster(path)) {
    const cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    if (m.empty()) throw ParseError("cannot decode mask '" + path.string() + "'");
    if (m.channels() != 1) throw ParseError("mask '" + path.string() + "' is not single-channel");
    mask.height = m.rows;
    mask.width = m.cols;
    mask.labels.resize(static_cast<std::size_t>(m.rows) * m.cols);
    for (int y = 0; y < m.rows; ++y)
      for (int x = 0; x < m.cols; ++x) {
        mask.at(y, x) = m.depth() == CV_16U ? m.at<std::uint16_t>(y, x) : m.at<std::uint8_t>(y, x);
      }
    return mask;
  }
  const NamedArrays arrays = NamedArrays::load(path);
  const NamedArray& l = arrays.get("labels");
  if (l.shape.size() != 2) throw ParseError("'" + path.string() + "': labels must be [H, W]");
  mask.height = static_cast<int>(l.shape[0]);
  mask.width = static_cast<int>(l.shape[1]);
  mask.labels.reserve(l.values.size());
  for (float v : l.values) mask.labels.push_back(static_cast<int>(v));
  return mask;
}

void save_mask(const std::filesystem::path& path, const LabelImage& mask) {
  const int max_label = mask.labels.empty() ? 0 : *std::max_element(mask.labels.begin(), mask.labels.end());
  const bool wide = max_label > 255;
  cv::Mat m(mask.height, mask.width, wide ? CV_16UC1 : CV_8UC1);
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x) {
      const int v = std::clamp(mask.at(y, x), 0, wide ? 65535 : 255);
      if (wide) {
        m.at<std::uint16_t>(y, x) = static_cast<std::uint16_t>(v);
      } else {
        m.at<std::uint8_t>(y, x) = static_cast<std::uint8_t>(v);
      }
    }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), m)) throw std::runtime_error("cannot write mask '" + path.string() + "'");
}

}  // namespace ovseg
