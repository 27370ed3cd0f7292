#include <gtest/gtest.h>

#include <cmath>
#include <string>

#include <aotmem/aotmem.h>
#include <json.hpp>

namespace {

std::string take(char* s) {
  std::string out = s ? s : "";
  aotmem_string_free(s);
  return out;
}

}  // namespace

TEST(CApi, ConstructAndVerifyRoundTrip) {
  aotmem_task* task = nullptr;
  ASSERT_EQ(aotmem_task_association(5, 2, 0, &task), AOTMEM_OK);
  size_t n = 0;
  ASSERT_EQ(aotmem_task_size(task, &n), AOTMEM_OK);
  EXPECT_EQ(n, 25u);

  aotmem_model* model = nullptr;
  char* cert = nullptr;
  ASSERT_EQ(aotmem_construct(task, R"({"d": 3, "d_h": 2, "seed": 7})", &model, &cert), AOTMEM_OK)
      << aotmem_last_error();
  const auto c = nlohmann::json::parse(take(cert));
  EXPECT_EQ(c["achieved_accuracy"].get<double>(), 1.0);

  double acc = 0.0;
  ASSERT_EQ(aotmem_accuracy(model, task, &acc), AOTMEM_OK);
  EXPECT_EQ(acc, 1.0);

  char* json = nullptr;
  ASSERT_EQ(aotmem_model_to_json(model, &json), AOTMEM_OK);
  aotmem_model* copy = nullptr;
  ASSERT_EQ(aotmem_model_from_json(json, &copy), AOTMEM_OK);
  aotmem_string_free(json);
  const int32_t tokens[] = {3, 1};
  double a[5], b[5];
  ASSERT_EQ(aotmem_model_logits(model, tokens, 2, a, 5), AOTMEM_OK);
  ASSERT_EQ(aotmem_model_logits(copy, tokens, 2, b, 5), AOTMEM_OK);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(a[i], b[i]);
  EXPECT_EQ(aotmem_model_logits(model, tokens, 2, a, 4), AOTMEM_ERR_INVALID_ARGUMENT);

  char* v = nullptr;
  ASSERT_EQ(aotmem_verify(copy, task, 0.0, &v), AOTMEM_OK);
  EXPECT_EQ(nlohmann::json::parse(take(v))["achieved_accuracy"].get<double>(), 1.0);

  aotmem_model_free(copy);
  aotmem_model_free(model);
  aotmem_task_free(task);
}

TEST(CApi, ErrorsCarryCodeAndMessage) {
  aotmem_task* task = nullptr;
  EXPECT_EQ(aotmem_task_association(0, 2, 0, &task), AOTMEM_ERR_INVALID_ARGUMENT);
  EXPECT_EQ(task, nullptr);
  EXPECT_GT(std::string(aotmem_last_error()).size(), 0u);
  EXPECT_EQ(aotmem_task_from_json("{not json", &task), AOTMEM_ERR_INVALID_ARGUMENT);
  EXPECT_EQ(aotmem_task_size(nullptr, nullptr), AOTMEM_ERR_INVALID_ARGUMENT);
  aotmem_task_free(nullptr);
  aotmem_model_free(nullptr);
  aotmem_string_free(nullptr);
}

TEST(CApi, CapacityReport) {
  char* out = nullptr;
  ASSERT_EQ(aotmem_capacity(R"({"H": 20, "d_h": 10, "d": 10, "N": 50, "S": 2})", &out), AOTMEM_OK)
      << aotmem_last_error();
  const auto j = nlohmann::json::parse(take(out));
  EXPECT_EQ(j["ours"].get<int>(), 210);
  EXPECT_EQ(j["previous"].get<int>(), 181);
  EXPECT_NEAR(j["phi_bound"].get<double>(), 0.10232, 1e-12);
}

TEST(CApi, TaskJsonAndTEpsilon) {
  aotmem_task* task = nullptr;
  ASSERT_EQ(aotmem_task_noisy_lookup(4, 1, 0.9, 2, &task), AOTMEM_OK);
  aotmem_task* smooth = nullptr;
  ASSERT_EQ(aotmem_task_smooth(task, 0.1, &smooth), AOTMEM_OK);
  char* json = nullptr;
  ASSERT_EQ(aotmem_task_to_json(smooth, &json), AOTMEM_OK);
  aotmem_task* back = nullptr;
  ASSERT_EQ(aotmem_task_from_json(json, &back), AOTMEM_OK);
  aotmem_string_free(json);
  size_t t = 0;
  ASSERT_EQ(aotmem_task_t_epsilon(back, 0.0, &t), AOTMEM_OK);
  EXPECT_EQ(t, 4u);
  aotmem_task_free(back);
  aotmem_task_free(smooth);
  aotmem_task_free(task);
}

TEST(CApi, VersionIsSet) { EXPECT_GT(std::string(aotmem_version()).size(), 0u); }
