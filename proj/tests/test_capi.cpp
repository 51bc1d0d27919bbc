// Exercises the shared library strictly through the C interface.

#include <misode.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>

static int failures = 0;

#define EXPECT(cond, what)                                      \
  do {                                                          \
    if (!(cond)) {                                              \
      std::printf("[FAIL] %s (%s)\n", what, #cond);             \
      ++failures;                                               \
    } else {                                                    \
      std::printf("[ok]   %s\n", what);                         \
    }                                                           \
  } while (0)

static bool file_contains(const std::string& path, const std::string& needle) {
  std::ifstream in(path);
  if (!in) return false;
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return text.find(needle) != std::string::npos;
}

int main() {
  EXPECT(misode_version() != nullptr && std::strlen(misode_version()) > 0, "version string");

  // config errors surface as MISODE_ERR_CONFIG with a message
  EXPECT(misode_datagen("not json") == MISODE_ERR_CONFIG, "malformed config rejected");
  EXPECT(std::strlen(misode_last_error()) > 0, "last_error populated");
  EXPECT(misode_datagen("{\"out\":\"/tmp/x.jsonl\",\"count\":0,\"seed\":1}") == MISODE_ERR_CONFIG,
         "invalid count rejected");
  EXPECT(misode_datagen(nullptr) == MISODE_ERR_CONFIG, "null config rejected");

  // data errors are distinct
  misode_corpus* missing = nullptr;
  EXPECT(misode_corpus_open("/tmp/misode_no_such_file.jsonl", &missing) == MISODE_ERR_DATA,
         "missing corpus is a data error");

  // vocabulary dump
  const char* vocab_path = "/tmp/misode_capi_vocab.txt";
  EXPECT(misode_dump_vocab(vocab_path) == MISODE_OK, "vocab dump");
  EXPECT(file_contains(vocab_path, "E-100"), "vocab contains exponent tokens");
  std::remove(vocab_path);

  // generate a small corpus end to end
  const char* corpus_path = "/tmp/misode_capi_corpus.jsonl";
  const std::string datagen_cfg = std::string("{\"out\":\"") + corpus_path +
                                  "\",\"count\":6,\"seed\":12,\"dims\":1,\"instances\":2,"
                                  "\"grid_points\":24,\"sigma\":0.0,\"workers\":2}";
  EXPECT(misode_datagen(datagen_cfg.c_str()) == MISODE_OK, "datagen runs");
  EXPECT(file_contains(std::string(corpus_path) + ".manifest.json", "config_hash"),
         "corpus manifest written");

  misode_corpus* corpus = nullptr;
  EXPECT(misode_corpus_open(corpus_path, &corpus) == MISODE_OK, "corpus opens");
  EXPECT(misode_corpus_size(corpus) == 6, "corpus size");
  char buf[4096];
  EXPECT(misode_corpus_render(corpus, 0, buf, sizeof(buf)) == MISODE_OK, "record renders");
  EXPECT(std::strstr(buf, "dx0/dt") != nullptr, "render looks like an equation");
  EXPECT(misode_corpus_render(corpus, 99, buf, sizeof(buf)) == MISODE_ERR_DATA,
         "index out of range is a data error");

  // train a tiny model for a few steps
  const char* ckpt_path = "/tmp/misode_capi_ckpt.bin";
  const std::string train_cfg = std::string("{\"corpus\":\"") + corpus_path +
                                "\",\"checkpoint_out\":\"" + ckpt_path +
                                "\",\"seed\":3,"
                                "\"model\":{\"preset\":\"tiny\",\"max_points\":32,"
                                "\"max_target\":96},"
                                "\"train\":{\"steps\":3,\"batch_size\":2,\"workers\":2,"
                                "\"seed\":3}}";
  EXPECT(misode_train(train_cfg.c_str()) == MISODE_OK, "train runs");

  misode_model* model = nullptr;
  EXPECT(misode_model_open(ckpt_path, &model) == MISODE_OK, "model opens");
  EXPECT(misode_model_config(model, buf, sizeof(buf)) == MISODE_OK, "model config");
  EXPECT(std::strstr(buf, "\"aggregator\":\"mean\"") != nullptr, "config is JSON");

  EXPECT(misode_model_predict(model, corpus, 0,
                              "{\"beam\":{\"size\":2,\"max_len\":12}}", buf,
                              sizeof(buf)) == MISODE_OK,
         "predict runs");
  EXPECT(std::strstr(buf, "\"ok\":") != nullptr, "prediction is JSON");

  char tiny[4];
  EXPECT(misode_model_config(model, tiny, sizeof(tiny)) == MISODE_ERR_CONFIG,
         "small buffer reported");

  // predictions + eval + report through the pipeline surface
  const char* pred_path = "/tmp/misode_capi_preds.jsonl";
  const std::string predict_cfg = std::string("{\"corpus\":\"") + corpus_path +
                                  "\",\"checkpoint\":\"" + ckpt_path + "\",\"out\":\"" +
                                  pred_path +
                                  "\",\"beam\":{\"size\":2,\"max_len\":12},\"workers\":2}";
  EXPECT(misode_predict(predict_cfg.c_str()) == MISODE_OK, "predict pipeline runs");

  const char* results_path = "/tmp/misode_capi_results.csv";
  const std::string eval_cfg = std::string("{\"corpus\":\"") + corpus_path +
                               "\",\"out\":\"" + results_path +
                               "\",\"predictor\":\"truth\",\"instance_counts\":[1,2],"
                               "\"seed\":5,\"workers\":2}";
  EXPECT(misode_eval(eval_cfg.c_str()) == MISODE_OK, "eval (truth mode) runs");
  EXPECT(file_contains(results_path, "tag,task,dim"), "results CSV header");

  const std::string eval_preds_cfg = std::string("{\"corpus\":\"") + corpus_path +
                                     "\",\"out\":\"/tmp/misode_capi_results2.csv\","
                                     "\"predictions\":\"" + pred_path +
                                     "\",\"seed\":5,\"workers\":2}";
  EXPECT(misode_eval(eval_preds_cfg.c_str()) == MISODE_OK, "eval scores a predictions file");
  EXPECT(file_contains("/tmp/misode_capi_results2.csv", "parse_failure"),
         "unparseable predictions become failed rows");

  const std::string report_cfg = std::string("{\"results\":\"") + results_path +
                                 "\",\"outdir\":\"/tmp/misode_capi_report\"}";
  EXPECT(misode_report(report_cfg.c_str()) == MISODE_OK, "report runs");
  EXPECT(file_contains("/tmp/misode_capi_report/summary.md", "| tag |"), "summary markdown");

  misode_model_close(model);
  misode_corpus_close(corpus);
  std::remove(corpus_path);
  std::remove(pred_path);
  std::remove(results_path);
  std::remove(ckpt_path);

  if (failures == 0) std::printf("all C API checks passed\n");
  return failures == 0 ? 0 : 1;
}
