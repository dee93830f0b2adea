#include "unispoof/unispoof.h"

#include <cstdlib>
#include <cstring>
#include <new>
#include <optional>

#include "unispoof/augment.hpp"
#include "unispoof/checkpoint.hpp"
#include "unispoof/metrics.hpp"
#include "unispoof/pipeline.hpp"
#include "unispoof/train.hpp"

using namespace unispoof;

struct unispoof_model {
  static constexpr std::uint32_t kMagic = 0x55534d44;
  std::uint32_t magic = kMagic;
  std::optional<FrmModel> frm;  // set for recognition checkpoints
  std::optional<UadModel> uad;  // set for attack-detection checkpoints

  const FrmModel& recognition() const { return uad ? uad->base : *frm; }
};

namespace {

thread_local std::string last_error;

int set_error(int status, const std::string& what) {
  last_error = what;
  return status;
}

// Runs `body`, turning exceptions into status codes.
template <typename F>
int guarded(F&& body) {
  try {
    last_error.clear();
    return body();
  } catch (const Error& e) {
    return set_error(static_cast<int>(e.code()), e.what());
  } catch (const json::exception& e) {
    return set_error(UNISPOOF_INVALID_ARGUMENT, e.what());
  } catch (const std::bad_alloc&) {
    return set_error(UNISPOOF_RUNTIME, "out of memory");
  } catch (const std::exception& e) {
    return set_error(UNISPOOF_INTERNAL, e.what());
  } catch (...) {
    return set_error(UNISPOOF_INTERNAL, "unknown exception");
  }
}

void need(const void* p, const char* name) {
  require(p != nullptr, ErrorCode::kInvalidArgument, std::string(name) + " is null");
}

const unispoof_model& checked(const unispoof_model* m) {
  need(m, "model");
  require(m->magic == unispoof_model::kMagic, ErrorCode::kInvalidArgument, "model handle is invalid");
  return *m;
}

Image wrap(const float* data, std::size_t h, std::size_t w, std::size_t c) {
  need(data, "image");
  require(h > 0 && w > 0, ErrorCode::kShape, "image must be non-empty");
  Image img(h, w, c);
  std::memcpy(img.data.data(), data, img.data.size() * sizeof(float));
  return img;
}

void check_input_size(const unispoof_model& m, std::size_t h, std::size_t w) {
  const std::size_t s = m.recognition().config.swin.image_size;
  require(h == s && w == s, ErrorCode::kShape,
          "image is " + std::to_string(h) + "x" + std::to_string(w) + ", model expects " + std::to_string(s) + "x" +
              std::to_string(s));
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

}  // namespace

extern "C" {

const char* unispoof_version(void) { return UNISPOOF_VERSION; }

const char* unispoof_status_string(int status) {
  switch (status) {
    case UNISPOOF_OK: return "ok";
    case UNISPOOF_INVALID_ARGUMENT: return "invalid argument";
    case UNISPOOF_SHAPE: return "shape mismatch";
    case UNISPOOF_IO: return "i/o error";
    case UNISPOOF_RUNTIME: return "runtime error";
    case UNISPOOF_NUMERICAL: return "numerical error";
    case UNISPOOF_CHECK_FAILED: return "check failed";
    case UNISPOOF_INTERNAL: return "internal error";
    default: return "unknown status";
  }
}

const char* unispoof_last_error(void) { return last_error.c_str(); }

void unispoof_string_free(char* s) { std::free(s); }

int unispoof_run(const char* command, const char* request_json, char** report_json) {
  if (report_json != nullptr) *report_json = nullptr;
  return guarded([&] {
    need(command, "command");
    need(report_json, "report_json");
    json request = json::object();
    if (request_json != nullptr && *request_json != '\0') {
      try {
        request = json::parse(request_json);
      } catch (const json::parse_error& e) {
        fail(ErrorCode::kInvalidArgument, std::string("request is not valid JSON: ") + e.what());
      }
    }
    const json report = run_command(command, request);
    *report_json = dup_string(report.dump(2));
    if (!report.value("ok", false)) return set_error(UNISPOOF_CHECK_FAILED, command + std::string(": a check failed"));
    return static_cast<int>(UNISPOOF_OK);
  });
}

int unispoof_model_load(const char* path, unispoof_model** out) {
  if (out != nullptr) *out = nullptr;
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    const Checkpoint ckpt = load_checkpoint(path);
    auto m = std::make_unique<unispoof_model>();
    if (ckpt.meta.value("kind", "") == "uad") {
      m->uad = UadModel::from_checkpoint(ckpt);
    } else {
      m->frm = FrmModel::from_checkpoint(ckpt);
    }
    *out = m.release();
    return static_cast<int>(UNISPOOF_OK);
  });
}

void unispoof_model_free(unispoof_model* model) {
  if (model == nullptr || model->magic != unispoof_model::kMagic) return;
  model->magic = 0;
  delete model;
}

int unispoof_model_input_size(const unispoof_model* model, size_t* size) {
  return guarded([&] {
    need(size, "size");
    *size = checked(model).recognition().config.swin.image_size;
    return static_cast<int>(UNISPOOF_OK);
  });
}

int unispoof_model_embedding_dim(const unispoof_model* model, size_t* dim) {
  return guarded([&] {
    need(dim, "dim");
    *dim = checked(model).recognition().config.arcface.embedding_dim;
    return static_cast<int>(UNISPOOF_OK);
  });
}

int unispoof_model_embed(const unispoof_model* model, const float* rgb, size_t height, size_t width,
                         float* embedding, size_t embedding_len) {
  return guarded([&] {
    const auto& m = checked(model);
    need(embedding, "embedding");
    check_input_size(m, height, width);
    const auto e = embed_image(m.recognition(), wrap(rgb, height, width, 3));
    require(embedding_len == e.size(), ErrorCode::kShape,
            "embedding buffer holds " + std::to_string(embedding_len) + " floats, need " + std::to_string(e.size()));
    std::memcpy(embedding, e.data(), e.size() * sizeof(float));
    return static_cast<int>(UNISPOOF_OK);
  });
}

int unispoof_spoof_score(const unispoof_model* model, const float* rgb, size_t height, size_t width, double* score) {
  return guarded([&] {
    const auto& m = checked(model);
    need(score, "score");
    require(m.uad.has_value(), ErrorCode::kInvalidArgument, "model has no attack-detection head");
    check_input_size(m, height, width);
    *score = spoof_score(*m.uad, wrap(rgb, height, width, 3));
    return static_cast<int>(UNISPOOF_OK);
  });
}

int unispoof_spsc(const float* rgb, size_t height, size_t width, unsigned long long seed, float* out, int* branch) {
  return guarded([&] {
    need(out, "out");
    const SpscResult r = spsc(wrap(rgb, height, width, 3), AugmentSpec{}, seed);
    std::memcpy(out, r.image.data.data(), r.image.data.size() * sizeof(float));
    if (branch != nullptr) *branch = r.branch == SpscBranch::kPrint ? 0 : 1;
    return static_cast<int>(UNISPOOF_OK);
  });
}

int unispoof_sdsc(const float* rgb, const float* mask, size_t height, size_t width, unsigned long long seed, float* out,
                  float* out_mask) {
  return guarded([&] {
    need(out, "out");
    const Image img = wrap(rgb, height, width, 3);
    const Image m = mask != nullptr ? wrap(mask, height, width, 1) : default_face_mask(height, width);
    const SdscResult r = sdsc(img, m, AugmentSpec{}, seed);
    std::memcpy(out, r.image.data.data(), r.image.data.size() * sizeof(float));
    if (out_mask != nullptr) std::memcpy(out_mask, r.mask.data.data(), r.mask.data.size() * sizeof(float));
    return static_cast<int>(UNISPOOF_OK);
  });
}

int unispoof_compute_eer(const double* genuine, size_t n_genuine, const double* impostor, size_t n_impostor,
                         double* eer, double* threshold) {
  return guarded([&] {
    need(eer, "eer");
    require(genuine != nullptr || n_genuine == 0, ErrorCode::kInvalidArgument, "genuine is null");
    require(impostor != nullptr || n_impostor == 0, ErrorCode::kInvalidArgument, "impostor is null");
    const EerResult r = compute_eer({genuine, n_genuine}, {impostor, n_impostor});
    *eer = r.eer;
    if (threshold != nullptr) *threshold = r.threshold;
    return static_cast<int>(UNISPOOF_OK);
  });
}

}  // extern "C"
