#include <gtest/gtest.h>

#include <filesystem>
#include <string>
#include <unistd.h>

#include "json.hpp"
#include "salaud/salaud.h"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

class CApi : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("salaud_capi_" + std::to_string(::getpid()) + "_" +
                                        ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  static std::string take(char* s) {
    std::string out = s ? s : "";
    salaud_free_string(s);
    return out;
  }

  static salaud_dataset* small_dataset(int seed = 1) {
    salaud_dataset* ds = nullptr;
    const std::string cfg = json{{"height", 32}, {"width", 32}, {"n_naevus", 10}, {"n_melanoma", 10},
                                 {"test_per_class", 3}, {"seed", seed}}
                                .dump();
    EXPECT_EQ(salaud_dataset_generate(cfg.c_str(), &ds), SALAUD_OK) << salaud_last_error();
    return ds;
  }

  fs::path dir_;
};

}  // namespace

TEST_F(CApi, VersionAndStatusNames) {
  EXPECT_STRNE(salaud_version(), "");
  EXPECT_STREQ(salaud_status_name(SALAUD_OK), "ok");
  EXPECT_STRNE(salaud_status_name(SALAUD_ERR_CONFIG), salaud_status_name(SALAUD_ERR_IO));
}

TEST_F(CApi, NullArgumentsAreRejected) {
  EXPECT_EQ(salaud_dataset_generate(nullptr, nullptr), SALAUD_ERR_INVALID_ARGUMENT);
  EXPECT_STRNE(salaud_last_error(), "");
  size_t n = 0;
  EXPECT_EQ(salaud_dataset_size(nullptr, &n), SALAUD_ERR_INVALID_ARGUMENT);
  salaud_model* m = nullptr;
  EXPECT_EQ(salaud_model_load(nullptr, &m), SALAUD_ERR_INVALID_ARGUMENT);
  double v = 0;
  EXPECT_EQ(salaud_ssim(nullptr, nullptr, nullptr, 1, &v), SALAUD_ERR_INVALID_ARGUMENT);
  salaud_dataset_free(nullptr);
  salaud_model_free(nullptr);
  salaud_map_free(nullptr);
  salaud_free_string(nullptr);
}

TEST_F(CApi, ConfigErrorsMapToStatusCodes) {
  salaud_dataset* ds = nullptr;
  EXPECT_EQ(salaud_dataset_generate("{\"n_naevus\":0,\"n_melanoma\":0}", &ds), SALAUD_ERR_CONFIG);
  EXPECT_EQ(ds, nullptr);
  EXPECT_EQ(salaud_dataset_generate("{\"bogus_key\":1}", &ds), SALAUD_ERR_CONFIG);
  EXPECT_NE(std::string(salaud_last_error()).find("bogus_key"), std::string::npos);
  EXPECT_EQ(salaud_dataset_generate("{not json", &ds), SALAUD_ERR_CONFIG);
  EXPECT_EQ(salaud_dataset_read(path("nowhere").c_str(), &ds), SALAUD_ERR_IO);
  char* out = nullptr;
  EXPECT_EQ(salaud_default_config("nope", &out), SALAUD_ERR_CONFIG);
  EXPECT_EQ(salaud_set_threads(-1), SALAUD_ERR_INVALID_ARGUMENT);
}

TEST_F(CApi, DefaultConfigsAreJson) {
  for (const char* kind : {"generate", "train", "suite", "explain", "ssim"}) {
    char* out = nullptr;
    ASSERT_EQ(salaud_default_config(kind, &out), SALAUD_OK) << kind;
    EXPECT_TRUE(json::parse(take(out)).is_object());
  }
}

TEST_F(CApi, DatasetRoundTripAndSelection) {
  salaud_dataset* ds = small_dataset();
  size_t n = 0;
  ASSERT_EQ(salaud_dataset_size(ds, &n), SALAUD_OK);
  EXPECT_EQ(n, 20u);
  char* ids = nullptr;
  ASSERT_EQ(salaud_dataset_select(ds, "{\"split\":\"test\",\"count\":4}", &ids), SALAUD_OK);
  const json sel = json::parse(take(ids));
  ASSERT_EQ(sel.size(), 4u);

  ASSERT_EQ(salaud_dataset_write(ds, path("ds").c_str()), SALAUD_OK);
  salaud_dataset* back = nullptr;
  ASSERT_EQ(salaud_dataset_read(path("ds").c_str(), &back), SALAUD_OK);
  char* m1 = nullptr;
  char* m2 = nullptr;
  ASSERT_EQ(salaud_dataset_manifest(ds, &m1), SALAUD_OK);
  ASSERT_EQ(salaud_dataset_manifest(back, &m2), SALAUD_OK);
  EXPECT_EQ(take(m1), take(m2));

  salaud_image* img = nullptr;
  ASSERT_EQ(salaud_dataset_image(back, sel[0].get<std::string>().c_str(), &img), SALAUD_OK);
  int h = 0, w = 0;
  ASSERT_EQ(salaud_image_size(img, &h, &w), SALAUD_OK);
  EXPECT_EQ(h, 32);
  EXPECT_EQ(w, 32);
  salaud_image* missing = nullptr;
  EXPECT_EQ(salaud_dataset_image(back, "no_such_id", &missing), SALAUD_ERR_INDEX);
  salaud_image_free(img);
  salaud_dataset_free(back);
  salaud_dataset_free(ds);
}

TEST_F(CApi, TrainSaveLoadExplain) {
  salaud_dataset* ds = small_dataset(2);
  salaud_model* init = nullptr;
  ASSERT_EQ(salaud_model_init("m", nullptr, 32, 32, 5, &init), SALAUD_OK) << salaud_last_error();

  salaud_model* same = nullptr;
  ASSERT_EQ(salaud_model_train(ds, init, "m", "{\"learning_rate\":0,\"epochs\":1}", &same, nullptr), SALAUD_OK)
      << salaud_last_error();
  int equal = 0;
  ASSERT_EQ(salaud_model_equal(init, same, &equal), SALAUD_OK);
  EXPECT_EQ(equal, 1);

  salaud_model* trained = nullptr;
  char* history = nullptr;
  ASSERT_EQ(salaud_model_train(ds, init, "m", "{\"epochs\":2,\"batch_size\":8}", &trained, &history), SALAUD_OK);
  EXPECT_EQ(json::parse(take(history)).at("epoch_loss").size(), 2u);
  ASSERT_EQ(salaud_model_save(trained, path("m.salaud").c_str()), SALAUD_OK);
  salaud_model* loaded = nullptr;
  ASSERT_EQ(salaud_model_load(path("m.salaud").c_str(), &loaded), SALAUD_OK);
  ASSERT_EQ(salaud_model_equal(trained, loaded, &equal), SALAUD_OK);
  EXPECT_EQ(equal, 1);
  char* info = nullptr;
  ASSERT_EQ(salaud_model_info(loaded, &info), SALAUD_OK);
  const json j = json::parse(take(info));
  EXPECT_FALSE(j.at("metrics").is_null());
  EXPECT_EQ(j.at("weighted_layers_top_down").size(), 5u);

  salaud_image* img = nullptr;
  ASSERT_EQ(salaud_dataset_image(ds, "img00000", &img), SALAUD_OK);
  double p = -1;
  ASSERT_EQ(salaud_model_predict(loaded, img, &p), SALAUD_OK);
  EXPECT_GT(p, 0.0);
  EXPECT_LT(p, 1.0);

  salaud_map* a = nullptr;
  salaud_map* b = nullptr;
  char* details = nullptr;
  ASSERT_EQ(salaud_explain(loaded, img, "{\"method\":\"gradcam\"}", &a, &details), SALAUD_OK);
  EXPECT_TRUE(json::parse(take(details)).contains("alphas"));
  ASSERT_EQ(salaud_explain(loaded, img, nullptr, &b, nullptr), SALAUD_OK);
  double s = 0;
  ASSERT_EQ(salaud_ssim(a, b, nullptr, 1, &s), SALAUD_OK);
  EXPECT_EQ(s, 1.0);

  salaud_map* shap = nullptr;
  ASSERT_EQ(salaud_explain(loaded, img, "{\"method\":\"kshap\",\"grid_k\":4,\"n_samples\":\"exhaustive\"}", &shap,
                           &details),
            SALAUD_OK)
      << salaud_last_error();
  const json att = json::parse(take(details)).at("attribution");
  double total = att.at("phi0").get<double>();
  for (double v : att.at("phi")) total += v;
  EXPECT_NEAR(total, p, 1e-6);

  ASSERT_EQ(salaud_map_write_csv(shap, path("m.csv").c_str()), SALAUD_OK);
  salaud_map* csv = nullptr;
  ASSERT_EQ(salaud_map_read_csv(path("m.csv").c_str(), &csv), SALAUD_OK);
  ASSERT_EQ(salaud_ssim(shap, csv, nullptr, 0, &s), SALAUD_OK);
  EXPECT_EQ(s, 1.0);
  ASSERT_EQ(salaud_map_render_overlay(shap, img, path("o.png").c_str()), SALAUD_OK);
  EXPECT_TRUE(fs::exists(path("o.png")));

  EXPECT_EQ(salaud_explain(loaded, img, "{\"method\":\"lime\"}", &a, nullptr), SALAUD_ERR_CONFIG);
  EXPECT_EQ(salaud_model_load(path("m.csv").c_str(), &loaded), SALAUD_ERR_FORMAT);

  for (salaud_map* m : {a, b, shap, csv}) salaud_map_free(m);
  salaud_image_free(img);
  for (salaud_model* m : {init, same, trained, loaded}) salaud_model_free(m);
  salaud_dataset_free(ds);
}

TEST_F(CApi, MapsAndCornerMass) {
  std::vector<double> values(100, 1.0);
  salaud_map* m = nullptr;
  ASSERT_EQ(salaud_map_create(10, 10, values.data(), &m), SALAUD_OK);
  double score = 0;
  ASSERT_EQ(salaud_corner_mass_score(m, 0.2, &score), SALAUD_OK);
  EXPECT_DOUBLE_EQ(score, 16.0 / 100.0);
  EXPECT_EQ(salaud_corner_mass_score(m, 0.6, &score), SALAUD_ERR_CONFIG);
  const double* raw = nullptr;
  ASSERT_EQ(salaud_map_values(m, &raw), SALAUD_OK);
  EXPECT_EQ(raw[99], 1.0);
  salaud_map* other = nullptr;
  ASSERT_EQ(salaud_map_create(10, 9, values.data(), &other), SALAUD_OK);
  double s = 0;
  EXPECT_EQ(salaud_ssim(m, other, nullptr, 1, &s), SALAUD_ERR_SHAPE);
  EXPECT_EQ(salaud_map_create(0, 10, values.data(), &other), SALAUD_ERR_SHAPE);
  salaud_map_free(other);
  salaud_map_free(m);
}

TEST_F(CApi, AuditsProduceReportsAndPanels) {
  salaud_dataset* ds = small_dataset(3);
  salaud_model* a = nullptr;
  salaud_model* b = nullptr;
  ASSERT_EQ(salaud_model_init("a", nullptr, 32, 32, 1, &a), SALAUD_OK);
  ASSERT_EQ(salaud_model_init("b", nullptr, 32, 32, 2, &b), SALAUD_OK);
  char* report = nullptr;
  ASSERT_EQ(salaud_audit_reproducibility(a, ds, "{\"count\":3}", nullptr, 2, path("panels").c_str(), &report),
            SALAUD_OK)
      << salaud_last_error();
  EXPECT_EQ(json::parse(take(report)).at("ssim").at("mean"), 1.0);
  EXPECT_EQ(std::distance(fs::directory_iterator(path("panels")), fs::directory_iterator{}), 3);

  ASSERT_EQ(salaud_audit_model_dependence(a, ds, "{\"count\":2}", nullptr, "top5", 3, "cascading", nullptr, &report),
            SALAUD_OK);
  EXPECT_EQ(json::parse(take(report)).at("degradation_pct").size(), 5u);
  EXPECT_EQ(salaud_audit_model_dependence(a, ds, nullptr, nullptr, "top5", 3, "sideways", nullptr, &report),
            SALAUD_ERR_CONFIG);

  // untrained models carry no metrics, so sensitivity cannot pick a group
  const salaud_model* pair[] = {a, b};
  EXPECT_EQ(salaud_audit_sensitivity(pair, 2, 0.02, ds, nullptr, nullptr, nullptr, &report), SALAUD_ERR_SELECTION);

  ASSERT_EQ(salaud_audit_spurious(a, a, ds, "{\"count\":2}", nullptr, 0.15, 2.0, nullptr, &report), SALAUD_OK);
  EXPECT_EQ(json::parse(take(report)).at("verdict"), false);
  ASSERT_EQ(salaud_audit_spurious(a, nullptr, ds, "{\"count\":2}", nullptr, 0.15, 2.0, nullptr, &report), SALAUD_OK);
  EXPECT_TRUE(json::parse(take(report)).at("verdict").is_null());
  salaud_model_free(a);
  salaud_model_free(b);
  salaud_dataset_free(ds);
}
