// Copyright 2026 The RegionSpot Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <CLI11.hpp>

#include "regionspot/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"regionspot: open-vocabulary region recognition over frozen backbones"};
  app.require_subcommand(1);

  regionspot::TrainArgs train_args;
  regionspot::InferArgs infer_args;
  regionspot::EvalArgs eval_args;
  regionspot::AttnArgs attn_args;
  uint64_t seed_flag = 0;
  bool seed_set = false;

  auto* train = app.add_subcommand("train", "optimize the fusion head over frozen encoders");
  train->add_option("--config", train_args.config_path, "run config JSON")->required();
  train->add_option("--out", train_args.out_dir, "output directory")->required();
  train
      ->add_option_function<uint64_t>(
          "--seed",
          [&](uint64_t v) {
            seed_flag = v;
            seed_set = true;
          },
          "override the config seed")
      ->expected(1);

  auto* infer = app.add_subcommand("infer", "classify regions of annotated images");
  infer->add_option("--checkpoint", infer_args.checkpoint, "model checkpoint")->required();
  infer->add_option("--annotations", infer_args.annotations, "COCO-style annotations JSON")
      ->required();
  infer->add_option("--images", infer_args.image_root, "image root directory");
  infer->add_option("--vocab", infer_args.vocab, "category names, one per line")->required();
  infer->add_option("--proposals", infer_args.proposals,
                    "proposals JSONL; omitted selects ground-truth boxes");
  infer->add_option("--out", infer_args.out_dir, "output directory")->required();
  infer->add_option("--top-k", infer_args.top_k, "ranked entries per region (0 = all)");

  auto* eval = app.add_subcommand("eval", "score predictions against ground truth");
  eval->add_option("--predictions", eval_args.predictions, "predictions JSONL")->required();
  eval->add_option("--annotations", eval_args.annotations, "COCO-style annotations JSON")
      ->required();
  eval->add_option("--freq-annotations", eval_args.freq_annotations,
                   "annotations used for frequency buckets (default: eval annotations)");
  eval->add_option("--out", eval_args.out_dir, "output directory")->required();
  eval->add_option("--mode", eval_args.mode, "fixed_box or iou");
  eval->add_option("--iou", eval_args.iou_threshold, "IoU threshold for iou mode");
  eval->add_option("--rare-below", eval_args.rare_below, "rare bucket threshold");
  eval->add_option("--common-below", eval_args.common_below, "common bucket threshold");

  auto* attn = app.add_subcommand("attn", "export cross-attention heatmaps");
  attn->add_option("--checkpoint", attn_args.checkpoint, "model checkpoint")->required();
  attn->add_option("--image", attn_args.image, "input image (PPM)")->required();
  attn->add_option("--boxes", attn_args.boxes, "JSON array of normalized [x1,y1,x2,y2] boxes")
      ->required();
  attn->add_option("--layer", attn_args.layer, "fusion layer index")->required();
  attn->add_option("--out", attn_args.out_dir, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return regionspot::kExitValidation;
  }

  const int workers = regionspot::workers_from_env();
  if (train->parsed()) {
    if (seed_set) train_args.seed = seed_flag;
    train_args.workers = workers;
    return regionspot::cmd_train(train_args);
  }
  if (infer->parsed()) {
    infer_args.workers = workers;
    return regionspot::cmd_infer(infer_args);
  }
  if (eval->parsed()) return regionspot::cmd_eval(eval_args);
  if (attn->parsed()) return regionspot::cmd_attn(attn_args);
  return regionspot::kExitValidation;
}
