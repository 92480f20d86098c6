#include "r2t/image_io.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

namespace r2t {

namespace {

cv::Mat to_channels(const cv::Mat& in, ColorMode mode) {
  cv::Mat out = in;
  if (in.channels() == 4) {
    cv::Mat planes[4];
    cv::split(in, planes);
    cv::merge(planes, 3, out);
  }
  if (mode == ColorMode::Gray && out.channels() == 3) {
    // Plain channel average keeps gray images stored as RGB bit-identical.
    cv::Mat planes[3];
    cv::split(out, planes);
    return (planes[0] + planes[1] + planes[2]) / 3.0;
  }
  if (mode == ColorMode::Rgb && out.channels() == 1) {
    cv::Mat planes[3] = {out, out, out};
    cv::merge(planes, 3, out);
  }
  return out;
}

}  // namespace

ImageTensor read_image(const fs::path& path, ColorMode mode) {
  cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (raw.empty()) throw IoError("cannot read image " + path.string());
  double scale = 1.0;
  if (raw.depth() == CV_16U) scale = 255.0 / 65535.0;
  else if (raw.depth() != CV_8U) throw IoError("unsupported bit depth in " + path.string());

  cv::Mat scaled;
  raw.convertTo(scaled, CV_32F, scale);
  cv::Mat f = to_channels(scaled, mode);
  if (!f.isContinuous()) f = f.clone();
  const int h = f.rows, w = f.cols, c = f.channels();
  auto hwc = torch::from_blob(f.data, {h, w, c}, torch::kFloat32).clone();
  auto chw = hwc.permute({2, 0, 1}).contiguous();
  if (c == 3) chw = chw.flip({0}).contiguous();  // BGR -> RGB
  return ImageTensor::clamped(chw, RangeTag::Raw0To255);
}

namespace {

cv::Mat to_mat(const torch::Tensor& chw, int depth) {
  auto t = chw;
  if (t.size(0) == 3) t = t.flip({0});
  t = t.permute({1, 2, 0}).contiguous();
  const int h = static_cast<int>(t.size(0)), w = static_cast<int>(t.size(1));
  const int c = static_cast<int>(t.size(2));
  if (depth == CV_8U) {
    auto u8 = t.round().clamp(0, 255).to(torch::kUInt8).contiguous();
    return cv::Mat(h, w, CV_8UC(c), u8.data_ptr()).clone();
  }
  auto u16 = t.round().clamp(0, 65535).to(torch::kInt32).contiguous();
  cv::Mat m(h, w, CV_16UC(c));
  auto acc = u16.data_ptr<int32_t>();
  for (int i = 0; i < h * w * c; ++i) m.ptr<uint16_t>()[i] = static_cast<uint16_t>(acc[i]);
  return m;
}

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

}  // namespace

void write_image(const fs::path& path, const ImageTensor& image) {
  ensure_parent(path);
  auto t = image.data().to(torch::kFloat32);
  if (image.range() == RangeTag::Unit0To1) t = t * 255.0;
  else if (image.range() == RangeTag::SignedPm1) t = (t + 1.0) * 127.5;
  if (!cv::imwrite(path.string(), to_mat(t, CV_8U)))
    throw IoError("cannot write image " + path.string());
}

void write_image16(const fs::path& path, const ImageTensor& unit_map) {
  unit_map.require(RangeTag::Unit0To1, "write_image16");
  ensure_parent(path);
  if (!cv::imwrite(path.string(), to_mat(unit_map.data() * 65535.0, CV_16U)))
    throw IoError("cannot write image " + path.string());
}

}  // namespace r2t
