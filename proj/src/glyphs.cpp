#include "harvim/glyphs.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>

#include "harvim/checkpoint.hpp"
#include "harvim/errors.hpp"
#include "harvim/optim.hpp"

namespace harvim {

namespace {

// 5x7 dot-matrix rows, most significant of the low 5 bits = left column.
// Order: '0'..'9', 'A'..'Z'.
constexpr std::uint8_t kFont5x7[GlyphAtlas::kCount][7] = {
    {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E},  // 0
    {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E},  // 1
    {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F},  // 2
    {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E},  // 3
    {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02},  // 4
    {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E},  // 5
    {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E},  // 6
    {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08},  // 7
    {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E},  // 8
    {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C},  // 9
    {0x0E, 0x11, 0x11, 0x11, 0x1F, 0x11, 0x11},  // A
    {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E},  // B
    {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E},  // C
    {0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C},  // D
    {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F},  // E
    {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10},  // F
    {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F},  // G
    {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11},  // H
    {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E},  // I
    {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C},  // J
    {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11},  // K
    {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F},  // L
    {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11},  // M
    {0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11},  // N
    {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E},  // O
    {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10},  // P
    {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D},  // Q
    {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11},  // R
    {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E},  // S
    {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04},  // T
    {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E},  // U
    {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04},  // V
    {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A},  // W
    {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11},  // X
    {0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04},  // Y
    {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F},  // Z
};

// Stretches the glyph's ink bounding box to fill the whole canonical
// square, so the rendered bounding box equals the placement box and
// padding ratio 0/1 puts ink flush against the frame edge.
Tensor rasterize(std::size_t index) {
  const std::size_t g = kGlyphSize;
  int r_lo = 7, r_hi = -1, c_lo = 5, c_hi = -1;
  for (int r = 0; r < 7; ++r) {
    for (int c = 0; c < 5; ++c) {
      if ((kFont5x7[index][r] >> (4 - c)) & 1) {
        r_lo = std::min(r_lo, r);
        r_hi = std::max(r_hi, r);
        c_lo = std::min(c_lo, c);
        c_hi = std::max(c_hi, c);
      }
    }
  }
  const int rows = r_hi - r_lo + 1, cols = c_hi - c_lo + 1;
  std::vector<double> bitmap(g * g, 0.0);
  for (std::size_t r = 0; r < g; ++r) {
    const int sr = r_lo + int(r) * rows / int(g);
    for (std::size_t c = 0; c < g; ++c) {
      const int sc = c_lo + int(c) * cols / int(g);
      if ((kFont5x7[index][sr] >> (4 - sc)) & 1) bitmap[r * g + c] = 1.0;
    }
  }
  return Tensor::from_data({g, g}, std::move(bitmap));
}

}  // namespace

GlyphAtlas::GlyphAtlas() {
  bitmaps_.reserve(kCount);
  for (std::size_t i = 0; i < kCount; ++i) {
    Tensor bitmap = rasterize(i);
    bool has_ink = false;
    for (double v : bitmap.data()) {
      if (v < 0.0 || v > 1.0) throw Error("glyph atlas: value out of [0,1]");
      has_ink = has_ink || v > 0.5;
    }
    if (!has_ink) throw Error("glyph atlas: empty glyph " + std::to_string(i));
    bitmaps_.push_back(std::move(bitmap));
  }
}

const Tensor& GlyphAtlas::bitmap(std::size_t index) const {
  if (index >= bitmaps_.size()) throw ConfigError("glyph index out of range");
  return bitmaps_[index];
}

std::size_t GlyphAtlas::index_of(char glyph) {
  if (glyph >= '0' && glyph <= '9') return std::size_t(glyph - '0');
  if (glyph >= 'A' && glyph <= 'Z') return std::size_t(glyph - 'A') + 10;
  throw ConfigError(std::string("no glyph for character '") + glyph + "'");
}

char GlyphAtlas::glyph_of(std::size_t index) {
  if (index < 10) return char('0' + index);
  if (index < kCount) return char('A' + (index - 10));
  throw ConfigError("glyph index out of range");
}

const GlyphAtlas& glyph_atlas() {
  static const GlyphAtlas atlas;
  return atlas;
}

// ---------------------------------------------------------------------------
// DecoderGenerator

DecoderGenerator DecoderGenerator::make(std::size_t hidden, SeededRng& rng) {
  DecoderGenerator dec;
  dec.hidden_ = hidden;
  const std::size_t in = kLatentDim + 2;
  const std::size_t out = kGlyphSize * kGlyphSize;
  auto init = [&](Shape shape, double std) {
    Tensor t = normal_tensor(rng, std::move(shape), std);
    return Tensor::from_data(t.shape(), {t.data().begin(), t.data().end()}, true);
  };
  dec.w1_ = init({in, hidden}, 1.0 / std::sqrt(double(in)));
  dec.b1_ = Tensor::from_data({1, hidden}, std::vector<double>(hidden, 0.0), true);
  dec.w2_ = init({hidden, hidden}, 1.0 / std::sqrt(double(hidden)));
  dec.b2_ = Tensor::from_data({1, hidden}, std::vector<double>(hidden, 0.0), true);
  dec.w3_ = init({hidden, hidden}, 1.0 / std::sqrt(double(hidden)));
  dec.b3_ = Tensor::from_data({1, hidden}, std::vector<double>(hidden, 0.0), true);
  dec.w4_ = init({hidden, out}, 1.0 / std::sqrt(double(hidden)));
  dec.b4_ = Tensor::from_data({1, out}, std::vector<double>(out, 0.0), true);
  for (std::size_t i = 0; i < GlyphAtlas::kCount; ++i) {
    dec.embeddings_.push_back(normal_tensor(rng, {kLatentDim}));
  }
  return dec;
}

Tensor DecoderGenerator::decode(const Tensor& z, const Tensor& p_left,
                                const Tensor& p_bottom) const {
  if (z.size() != kLatentDim) throw ShapeError("decode: latent size mismatch");
  Tensor input = concat({reshape(z, {kLatentDim}), reshape(p_left, {1}),
                         reshape(p_bottom, {1})});
  Tensor h = reshape(input, {1, kLatentDim + 2});
  h = tanh(add(matmul(h, w1_), b1_));
  h = tanh(add(matmul(h, w2_), b2_));
  h = tanh(add(matmul(h, w3_), b3_));
  Tensor out = sigmoid(add(matmul(h, w4_), b4_));
  return reshape(out, {kGlyphSize, kGlyphSize});
}

const Tensor& DecoderGenerator::embedding(std::size_t glyph_index) const {
  if (glyph_index >= embeddings_.size()) {
    throw ConfigError("embedding: glyph index out of range");
  }
  return embeddings_[glyph_index];
}

DecoderGenerator::TrainStats DecoderGenerator::train(int epochs,
                                                     double learning_rate,
                                                     SeededRng& rng) {
  const auto& atlas = glyph_atlas();
  AdamW optimizer({.lr = learning_rate});
  auto params = parameters();
  TrainStats stats;
  const std::size_t g = kGlyphSize;

  for (int epoch = 0; epoch < epochs; ++epoch) {
    double epoch_loss = 0.0;
    int count = 0;
    for (std::size_t gi = 0; gi < GlyphAtlas::kCount; ++gi) {
      const int dx = int(rng.next_u64() % 5) - 2;       // column shift
      const int dy_down = int(rng.next_u64() % 5) - 2;  // row shift downward
      const double p_left = (dx + 2) / 4.0;
      const double p_bottom = (2 - dy_down) / 4.0;

      std::vector<double> target(g * g, 0.0);
      const auto& src = atlas.bitmap(gi).data();
      for (std::size_t r = 0; r < g; ++r) {
        for (std::size_t c = 0; c < g; ++c) {
          const long sr = long(r) - dy_down, sc = long(c) - dx;
          if (sr >= 0 && sr < long(g) && sc >= 0 && sc < long(g)) {
            target[r * g + c] = src[std::size_t(sr) * g + std::size_t(sc)];
          }
        }
      }

      Tensor out = decode(embeddings_[gi], Tensor::scalar(p_left),
                          Tensor::scalar(p_bottom));
      Tensor diff = sub(reshape(out, {g * g}),
                        Tensor::from_data({g * g}, std::move(target)));
      Tensor loss = mean(mul(diff, diff));
      backward(loss);
      epoch_loss += loss.item();
      ++count;
      for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor gr = params[p]->grad();
        if (gr.defined()) *params[p] = optimizer.step(p, *params[p], gr);
      }
    }
    stats.loss.push_back(epoch_loss / count);
  }
  return stats;
}

std::vector<Tensor*> DecoderGenerator::parameters() {
  return {&w1_, &b1_, &w2_, &b2_, &w3_, &b3_, &w4_, &b4_};
}

void DecoderGenerator::freeze() {
  for (Tensor* p : parameters()) *p = p->detach();
}

void DecoderGenerator::save(const std::string& path) const {
  CheckpointRecords records;
  records.emplace_back("meta.kind", Tensor::scalar(2.0));
  records.emplace_back("meta.hidden", Tensor::scalar(double(hidden_)));
  const char* names[] = {"w1", "b1", "w2", "b2", "w3", "b3", "w4", "b4"};
  const Tensor* tensors[] = {&w1_, &b1_, &w2_, &b2_, &w3_, &b3_, &w4_, &b4_};
  for (int i = 0; i < 8; ++i) {
    records.emplace_back(std::string("net.") + names[i], *tensors[i]);
  }
  for (std::size_t i = 0; i < embeddings_.size(); ++i) {
    records.emplace_back("embedding." + std::to_string(i), embeddings_[i]);
  }
  save_checkpoint(path, records);
}

DecoderGenerator DecoderGenerator::load(const std::string& path) {
  auto records = load_checkpoint(path);
  std::map<std::string, Tensor> map(records.begin(), records.end());
  auto get = [&](const std::string& name) {
    auto it = map.find(name);
    if (it == map.end()) throw IoError("checkpoint " + path + ": missing " + name);
    return it->second;
  };
  if (get("meta.kind").item() != 2.0) {
    throw IoError("checkpoint " + path + ": not a decoder");
  }
  SeededRng dummy(0);
  DecoderGenerator dec = make(std::size_t(get("meta.hidden").item()), dummy);
  const char* names[] = {"w1", "b1", "w2", "b2", "w3", "b3", "w4", "b4"};
  Tensor* tensors[] = {&dec.w1_, &dec.b1_, &dec.w2_, &dec.b2_,
                       &dec.w3_, &dec.b3_, &dec.w4_, &dec.b4_};
  for (int i = 0; i < 8; ++i) {
    Tensor loaded = get(std::string("net.") + names[i]);
    if (loaded.shape() != tensors[i]->shape()) {
      throw IoError("checkpoint " + path + ": shape mismatch for net." + names[i]);
    }
    *tensors[i] = loaded;
  }
  for (std::size_t i = 0; i < dec.embeddings_.size(); ++i) {
    dec.embeddings_[i] = get("embedding." + std::to_string(i));
  }
  dec.freeze();
  return dec;
}

}  // namespace harvim
