#!/usr/bin/env node
/**
 * Sidecar CLI: model initialization, fixture rendering, and extraction jobs
 * that produce manifest + blob pairs for the primary engine.
 */
import * as fs from "fs";
import * as path from "path";

import yargs from "yargs";
import { hideBin } from "yargs/helpers";

import { runExtraction, JobSpec } from "./extract";
import { makeFixture } from "./fixture";
import { DEFAULT_DIM, LinearEmbedder, saveModel } from "./model";

function writeDefaultModels(dir: string): { backend_id: string; model_path: string }[] {
  fs.mkdirSync(dir, { recursive: true });
  const specs = [
    { backendId: "face-a", seed: 1001 },
    { backendId: "face-b", seed: 1002 },
    { backendId: "face-c", seed: 1003 },
  ];
  return specs.map(({ backendId, seed }) => {
    const modelPath = path.join(dir, `${backendId}.mdl`);
    saveModel(modelPath, LinearEmbedder.fromSeed({ backendId, dim: DEFAULT_DIM, seed }));
    return { backend_id: backendId, model_path: modelPath };
  });
}

void yargs(hideBin(process.argv))
  .scriptName("multiid-sidecar")
  .command(
    "init-model",
    "Write a deterministic embedding model file",
    (y) =>
      y
        .option("backend-id", { type: "string", demandOption: true })
        .option("dim", { type: "number", default: DEFAULT_DIM })
        .option("seed", { type: "number", demandOption: true })
        .option("out", { type: "string", demandOption: true }),
    (argv) => {
      saveModel(
        argv.out,
        LinearEmbedder.fromSeed({
          backendId: argv["backend-id"],
          dim: argv.dim,
          seed: argv.seed,
        }),
      );
      console.log(`wrote ${argv.out}`);
    },
  )
  .command(
    "fixture",
    "Render a synthetic image corpus with ground truth and a ready job spec",
    (y) =>
      y
        .option("output-dir", { type: "string", demandOption: true })
        .option("images", { type: "number", default: 10 })
        .option("identities", { type: "number", default: 5 })
        .option("seed", { type: "number", default: 0 })
        .option("empty-fraction", { type: "number", default: 0 }),
    (argv) => {
      const truth = makeFixture({
        outputDir: argv["output-dir"],
        nImages: argv.images,
        nIdentities: argv.identities,
        seed: argv.seed,
        emptyFraction: argv["empty-fraction"],
      });
      const backends = writeDefaultModels(path.join(argv["output-dir"], "models"));
      const job: JobSpec = {
        corpus_id: "sidecar-fixture",
        split: "multi-ID-unpaired",
        backends,
        images: truth.map((t) => ({ image_id: t.image_id, path: t.path })),
        output_manifest: path.join(argv["output-dir"], "extracted.manifest.json"),
        output_blob: path.join(argv["output-dir"], "extracted.mide"),
        skip_log: path.join(argv["output-dir"], "skips.json"),
      };
      const jobPath = path.join(argv["output-dir"], "job.json");
      fs.writeFileSync(jobPath, JSON.stringify(job, null, 2));
      console.log(`rendered ${argv.images} images, job spec at ${jobPath}`);
    },
  )
  .command(
    "extract",
    "Run an extraction job (images -> manifest + blob)",
    (y) => y.option("job", { type: "string", demandOption: true }),
    (argv) => {
      const spec = JSON.parse(fs.readFileSync(argv.job, "utf-8")) as JobSpec;
      const summary = runExtraction(spec);
      console.log(
        `extracted ${summary.faces} faces from ${summary.images} images ` +
          `(${summary.skipped.length} skipped, ` +
          `${summary.out_of_bounds.length} flagged out-of-bounds)`,
      );
    },
  )
  .demandCommand(1)
  .strict()
  .help()
  .parse();
