#pragma once

#include <functional>
#include <string>
#include <vector>

#include "redloop/pipeline.hpp"

// Answers prompts through a callback and keeps every prompt it saw.
class FakeBackend : public redloop::ModelBackend {
 public:
  explicit FakeBackend(std::function<std::string(const redloop::Prompt&)> fn) : fn_(std::move(fn)) {}
  std::string complete(const redloop::Prompt& p) override {
    prompts.push_back(p);
    return fn_(p);
  }
  std::string identity() const override { return "fake"; }
  std::vector<redloop::Prompt> prompts;

 private:
  std::function<std::string(const redloop::Prompt&)> fn_;
};
