/**
 * Extraction pipeline: patch PNGs -> preprocessed batches -> pooled
 * features -> one EMB1 file plus manifest.
 *
 * Patch files are named `<wsi_id>_<patch_index>.png`; records land in
 * the output ascending by patch index. Undecodable images are skipped
 * with a warning and listed in a `<out>.skipped.json` sidecar.
 */

import * as tf from '@tensorflow/tfjs'
import { promises as fs } from 'node:fs'
import * as path from 'node:path'
import { PNG } from 'pngjs'

import { EmbRecord, stableJson, writeEmb1 } from './emb1.js'
import { FeatureModel, INPUT_SIZE, PREPROCESSING } from './model.js'

export interface PatchFile {
  wsiId: string
  patchIndex: number
  file: string
}

export interface ExtractionJob {
  patchesDir: string
  outPath: string
  model: FeatureModel
  batchSize: number
  wsiId?: string
}

export interface ExtractionResult {
  wsiId: string
  count: number
  dim: number
  skipped: string[]
}

const PATCH_NAME = /^(.+)_(\d+)\.png$/

export async function scanPatches(patchesDir: string, wsiId?: string): Promise<PatchFile[]> {
  const entries = await fs.readdir(patchesDir)
  const patches: PatchFile[] = []
  for (const entry of entries.sort()) {
    const match = PATCH_NAME.exec(entry)
    if (!match) {
      continue
    }
    patches.push({
      wsiId: match[1],
      patchIndex: Number(match[2]),
      file: path.join(patchesDir, entry),
    })
  }
  const filtered = wsiId === undefined ? patches : patches.filter(p => p.wsiId === wsiId)
  if (filtered.length === 0) {
    throw new Error(`no patch PNGs matching <wsi_id>_<index>.png under ${patchesDir}`)
  }
  const ids = new Set(filtered.map(p => p.wsiId))
  if (ids.size > 1) {
    throw new Error(
      `patches from ${ids.size} WSIs in one directory (${[...ids].sort().join(', ')}); ` +
        'pass --wsi-id to pick one',
    )
  }
  const seen = new Set<number>()
  for (const patch of filtered) {
    if (seen.has(patch.patchIndex)) {
      throw new Error(`duplicate patch index ${patch.patchIndex} for ${patch.wsiId}`)
    }
    seen.add(patch.patchIndex)
  }
  filtered.sort((a, b) => a.patchIndex - b.patchIndex)
  return filtered
}

/** Decode a PNG into a [H, W, 3] RGB float tensor in [0, 1]. */
export function decodePatch(data: Buffer): tf.Tensor3D {
  const png = PNG.sync.read(data)
  const pixels = new Float32Array(png.width * png.height * 3)
  for (let i = 0; i < png.width * png.height; i++) {
    pixels[i * 3] = png.data[i * 4] / 255
    pixels[i * 3 + 1] = png.data[i * 4 + 1] / 255
    pixels[i * 3 + 2] = png.data[i * 4 + 2] / 255
  }
  return tf.tensor3d(pixels, [png.height, png.width, 3])
}

/** Resize and normalize one decoded patch to the model input geometry. */
export function preprocess(image: tf.Tensor3D): tf.Tensor3D {
  return tf.tidy(() => {
    const resized = tf.image.resizeBilinear(image, [INPUT_SIZE, INPUT_SIZE])
    const mean = tf.tensor1d(PREPROCESSING.mean)
    const std = tf.tensor1d(PREPROCESSING.std)
    return resized.sub(mean).div(std) as tf.Tensor3D
  })
}

export async function extract(job: ExtractionJob): Promise<ExtractionResult> {
  const patches = await scanPatches(job.patchesDir, job.wsiId)
  const wsiId = patches[0].wsiId
  const records: EmbRecord[] = []
  const skipped: string[] = []
  let dim = -1

  for (let start = 0; start < patches.length; start += job.batchSize) {
    const slice = patches.slice(start, start + job.batchSize)
    const inputs: tf.Tensor3D[] = []
    const kept: PatchFile[] = []
    for (const patch of slice) {
      try {
        const image = decodePatch(await fs.readFile(patch.file))
        inputs.push(preprocess(image))
        image.dispose()
        kept.push(patch)
      } catch (error) {
        console.warn(`warning: skipping undecodable ${patch.file}: ${String(error)}`)
        skipped.push(path.basename(patch.file))
      }
    }
    if (kept.length === 0) {
      continue
    }
    const batch = tf.stack(inputs) as tf.Tensor4D
    inputs.forEach(t => t.dispose())
    const features = job.model.embed(batch)
    batch.dispose()
    const values = (await features.data()) as Float32Array
    dim = features.shape[1]
    features.dispose()
    for (let row = 0; row < kept.length; row++) {
      records.push({
        patchIndex: kept[row].patchIndex,
        values: values.slice(row * dim, (row + 1) * dim),
      })
    }
  }

  if (records.length === 0) {
    throw new Error('every patch image failed to decode; nothing to write')
  }
  await writeEmb1(job.outPath, records, dim, {
    wsi_id: wsiId,
    model: job.model.name,
    dim,
    count: records.length,
    skipped_count: skipped.length,
    preprocessing: PREPROCESSING,
  })
  if (skipped.length > 0) {
    const sidecar = `${job.outPath}.skipped.json`
    await fs.writeFile(`${sidecar}.tmp`, stableJson(skipped) + '\n')
    await fs.rename(`${sidecar}.tmp`, sidecar)
  }
  return { wsiId, count: records.length, dim, skipped }
}
