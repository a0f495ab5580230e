#!/usr/bin/env node
/**
 * extract --patches DIR --model NAME --out FILE.emb [--batch N]
 *
 * Runs the feature model over every patch PNG in a directory and writes
 * an EMB1 embedding file plus a JSON manifest (model identity,
 * preprocessing, count) consumable by the search engine.
 */

import * as tf from '@tensorflow/tfjs'
import yargs from 'yargs'
import { hideBin } from 'yargs/helpers'

import { extract } from './extract.js'
import { DEFAULT_MODEL, resolveModel } from './model.js'

async function main(): Promise<number> {
  const argv = await yargs(hideBin(process.argv))
    .option('patches', {
      type: 'string',
      demandOption: true,
      describe: 'directory of <wsi_id>_<patch_index>.png files',
    })
    .option('out', {
      type: 'string',
      demandOption: true,
      describe: 'output EMB1 path',
    })
    .option('model', {
      type: 'string',
      default: DEFAULT_MODEL,
      describe: 'feature model name',
    })
    .option('model-dir', {
      type: 'string',
      describe: 'local tfjs graph model directory (model.json + shards)',
    })
    .option('batch', { type: 'number', default: 8, describe: 'images per batch' })
    .option('seed', { type: 'number', default: 42, describe: 'weight seed for the default model' })
    .option('wsi-id', { type: 'string', describe: 'restrict to one wsi_id' })
    .strict()
    .help()
    .parse()

  await tf.setBackend('cpu')
  await tf.ready()
  const model = await resolveModel(argv.model, argv.seed, argv['model-dir'])
  try {
    const result = await extract({
      patchesDir: argv.patches,
      outPath: argv.out,
      model,
      batchSize: Math.max(1, argv.batch),
      wsiId: argv['wsi-id'],
    })
    console.log(
      `extracted ${result.count} embeddings (dim ${result.dim}) for ${result.wsiId} ` +
        `-> ${argv.out}` +
        (result.skipped.length > 0 ? ` (skipped ${result.skipped.length})` : ''),
    )
    return 0
  } finally {
    model.dispose()
  }
}

main()
  .then(code => process.exit(code))
  .catch(error => {
    console.error(`error: ${error instanceof Error ? error.message : String(error)}`)
    process.exit(1)
  })
