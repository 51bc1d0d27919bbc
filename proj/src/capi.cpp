#include "misode.h"

#include <cstring>
#include <iostream>
#include <string>

#include <nlohmann/json.hpp>

#include "corpus_io.hpp"
#include "infer.hpp"
#include "pipeline.hpp"
#include "selftest.hpp"

namespace {

thread_local std::string g_last_error;

misode_status fail(misode_status code, const std::string& message) {
  g_last_error = message;
  return code;
}

template <typename Fn>
misode_status guarded(Fn&& fn) {
  try {
    fn();
    return MISODE_OK;
  } catch (const misode::ConfigError& e) {
    return fail(MISODE_ERR_CONFIG, e.what());
  } catch (const misode::DataError& e) {
    return fail(MISODE_ERR_DATA, e.what());
  } catch (const std::bad_alloc&) {
    return fail(MISODE_ERR_RUNTIME, "out of memory");
  } catch (const std::exception& e) {
    return fail(MISODE_ERR_RUNTIME, e.what());
  }
}

misode_status copy_out(const std::string& s, char* buf, size_t buflen) {
  if (!buf || buflen == 0) return fail(MISODE_ERR_CONFIG, "output buffer is null");
  if (s.size() + 1 > buflen)
    return fail(MISODE_ERR_CONFIG,
                "output buffer too small (need " + std::to_string(s.size() + 1) + " bytes)");
  std::memcpy(buf, s.c_str(), s.size() + 1);
  return MISODE_OK;
}

misode_status require_arg(const void* p, const char* what) {
  if (!p) return fail(MISODE_ERR_CONFIG, std::string(what) + " is null");
  return MISODE_OK;
}

}  // namespace

struct misode_corpus {
  std::vector<misode::SystemRecord> records;
};

struct misode_model {
  std::unique_ptr<misode::Model<float>> model;
};

extern "C" {

const char* misode_version(void) { return "0.1.0"; }

const char* misode_last_error(void) { return g_last_error.c_str(); }

misode_status misode_datagen(const char* config_json) {
  if (auto s = require_arg(config_json, "config"); s != MISODE_OK) return s;
  return guarded([&] { misode::run_datagen(config_json, std::cout); });
}

misode_status misode_train(const char* config_json) {
  if (auto s = require_arg(config_json, "config"); s != MISODE_OK) return s;
  return guarded([&] { misode::run_train(config_json, std::cout); });
}

misode_status misode_predict(const char* config_json) {
  if (auto s = require_arg(config_json, "config"); s != MISODE_OK) return s;
  return guarded([&] { misode::run_predict(config_json, std::cout); });
}

misode_status misode_eval(const char* config_json) {
  if (auto s = require_arg(config_json, "config"); s != MISODE_OK) return s;
  return guarded([&] { misode::run_eval(config_json, std::cout); });
}

misode_status misode_report(const char* config_json) {
  if (auto s = require_arg(config_json, "config"); s != MISODE_OK) return s;
  return guarded([&] { misode::run_report(config_json, std::cout); });
}

misode_status misode_selftest(int* failures) {
  int local = 0;
  const misode_status s = guarded([&] { local = misode::print_selftest(std::cout); });
  if (failures) *failures = local;
  if (s != MISODE_OK) return s;
  if (local > 0) return fail(MISODE_ERR_RUNTIME, std::to_string(local) + " selftest checks failed");
  return MISODE_OK;
}

misode_status misode_dump_vocab(const char* path) {
  if (auto s = require_arg(path, "path"); s != MISODE_OK) return s;
  return guarded([&] { misode::Vocab::instance().dump(path); });
}

misode_status misode_corpus_open(const char* path, misode_corpus** out) {
  if (auto s = require_arg(path, "path"); s != MISODE_OK) return s;
  if (auto s = require_arg(out, "out"); s != MISODE_OK) return s;
  return guarded([&] {
    auto handle = std::make_unique<misode_corpus>();
    handle->records = misode::load_corpus(path);
    *out = handle.release();
  });
}

size_t misode_corpus_size(const misode_corpus* corpus) {
  return corpus ? corpus->records.size() : 0;
}

misode_status misode_corpus_render(const misode_corpus* corpus, size_t index, char* buf,
                                   size_t buflen) {
  if (auto s = require_arg(corpus, "corpus"); s != MISODE_OK) return s;
  if (index >= corpus->records.size()) return fail(MISODE_ERR_DATA, "record index out of range");
  return copy_out(misode::render_system(corpus->records[index].system), buf, buflen);
}

void misode_corpus_close(misode_corpus* corpus) { delete corpus; }

misode_status misode_model_open(const char* path, misode_model** out) {
  if (auto s = require_arg(path, "path"); s != MISODE_OK) return s;
  if (auto s = require_arg(out, "out"); s != MISODE_OK) return s;
  return guarded([&] {
    auto handle = std::make_unique<misode_model>();
    handle->model = std::move(misode::Model<float>::load(path).model);
    *out = handle.release();
  });
}

misode_status misode_model_config(const misode_model* model, char* buf, size_t buflen) {
  if (auto s = require_arg(model, "model"); s != MISODE_OK) return s;
  return copy_out(model->model->config().to_json(), buf, buflen);
}

misode_status misode_model_predict(const misode_model* model, const misode_corpus* corpus,
                                   size_t index, const char* options_json, char* buf,
                                   size_t buflen) {
  if (auto s = require_arg(model, "model"); s != MISODE_OK) return s;
  if (auto s = require_arg(corpus, "corpus"); s != MISODE_OK) return s;
  if (index >= corpus->records.size()) return fail(MISODE_ERR_DATA, "record index out of range");
  std::string rendered;
  const misode_status s = guarded([&] {
    misode::PredictConfig cfg;
    if (options_json && std::strlen(options_json) > 0) {
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(options_json);
      } catch (const nlohmann::json::exception& e) {
        throw misode::ConfigError(std::string("options are not valid JSON: ") + e.what());
      }
      cfg.rescale = j.value("rescale", cfg.rescale);
      cfg.sigma = j.value("sigma", cfg.sigma);
      cfg.instances = j.value("instances", cfg.instances);
      if (j.contains("beam")) {
        const auto& b = j["beam"];
        cfg.beam.beam_size = b.value("size", cfg.beam.beam_size);
        cfg.beam.temperature = b.value("temperature", cfg.beam.temperature);
        cfg.beam.max_len = b.value("max_len", cfg.beam.max_len);
      }
    }
    const misode::Prediction p =
        misode::predict(*model->model, corpus->records[index], cfg);
    nlohmann::json out_j;
    out_j["ok"] = p.ok;
    out_j["rms"] = p.rms;
    if (p.ok)
      out_j["infix"] = misode::render_system(p.system);
    else
      out_j["failure"] = p.failure;
    rendered = out_j.dump();
  });
  if (s != MISODE_OK) return s;
  return copy_out(rendered, buf, buflen);
}

void misode_model_close(misode_model* model) { delete model; }

}  // extern "C"
