/**
 * Feature models: image batch in, pooled feature vectors out.
 *
 * The default model is a seeded convolutional stack ending in global
 * average pooling over 1024 channels. Its weights come from a fixed
 * PRNG, so it runs fully offline and reproduces the same features on
 * every machine. Random conv features are not a trained pathology
 * network, but the engine downstream is feature-agnostic; any tfjs
 * graph/layers model with a pooled head can be swapped in from a local
 * directory and is recorded in the output manifest.
 */

import * as tf from '@tensorflow/tfjs'
import { promises as fs } from 'node:fs'
import * as path from 'node:path'

import { heNormal, mulberry32 } from './rng.js'

export const DEFAULT_MODEL = 'seeded-cnn-1024'
export const INPUT_SIZE = 224

// Standard ImageNet preprocessing, pinned for determinism.
export const PREPROCESSING = {
  resize: `bilinear ${INPUT_SIZE}x${INPUT_SIZE}, no corner alignment`,
  scale: '1/255',
  mean: [0.485, 0.456, 0.406],
  std: [0.229, 0.224, 0.225],
}

export interface FeatureModel {
  name: string
  dim: number
  /** [batch, H, W, 3] preprocessed images -> [batch, dim] pooled features. */
  embed(images: tf.Tensor4D): tf.Tensor2D
  dispose(): void
}

interface ConvSpec {
  inChannels: number
  outChannels: number
  stride: number
}

const SEEDED_STACK: ConvSpec[] = [
  { inChannels: 3, outChannels: 32, stride: 2 },
  { inChannels: 32, outChannels: 64, stride: 2 },
  { inChannels: 64, outChannels: 128, stride: 2 },
  { inChannels: 128, outChannels: 1024, stride: 2 },
]

export function seededCnn(seed: number): FeatureModel {
  const rng = mulberry32(seed)
  const kernels = SEEDED_STACK.map(spec => {
    const count = 3 * 3 * spec.inChannels * spec.outChannels
    const fanIn = 3 * 3 * spec.inChannels
    return tf.tensor4d(heNormal(count, fanIn, rng), [3, 3, spec.inChannels, spec.outChannels])
  })
  return {
    name: `${DEFAULT_MODEL}-seed${seed}`,
    dim: SEEDED_STACK[SEEDED_STACK.length - 1].outChannels,
    embed(images: tf.Tensor4D): tf.Tensor2D {
      return tf.tidy(() => {
        let activation: tf.Tensor4D = images
        for (let i = 0; i < kernels.length; i++) {
          activation = tf.relu(
            tf.conv2d(activation, kernels[i] as tf.Tensor4D, SEEDED_STACK[i].stride, 'same'),
          )
        }
        return tf.mean(activation, [1, 2]) as tf.Tensor2D
      })
    },
    dispose() {
      kernels.forEach(kernel => kernel.dispose())
    },
  }
}

/**
 * Load a local tfjs graph model (model.json + weight shards) from disk.
 * Plain @tensorflow/tfjs ships no filesystem IO handler, so a minimal
 * one is provided here.
 */
export async function loadLocalModel(modelDir: string, name: string): Promise<FeatureModel> {
  const modelJsonPath = path.join(modelDir, 'model.json')
  const modelJson = JSON.parse(await fs.readFile(modelJsonPath, 'utf8'))
  const handler: tf.io.IOHandler = {
    load: async () => {
      const weightSpecs: tf.io.WeightsManifestEntry[] = []
      const buffers: Buffer[] = []
      for (const group of modelJson.weightsManifest) {
        weightSpecs.push(...group.weights)
        for (const shard of group.paths) {
          buffers.push(await fs.readFile(path.join(modelDir, shard)))
        }
      }
      const weightData = Buffer.concat(buffers)
      return {
        modelTopology: modelJson.modelTopology,
        format: modelJson.format,
        generatedBy: modelJson.generatedBy,
        convertedBy: modelJson.convertedBy,
        weightSpecs,
        weightData: weightData.buffer.slice(
          weightData.byteOffset,
          weightData.byteOffset + weightData.byteLength,
        ),
      }
    },
  }
  const graph = await tf.loadGraphModel(handler)
  const model: FeatureModel = {
    name,
    dim: -1, // discovered from the first batch
    embed(images: tf.Tensor4D): tf.Tensor2D {
      return tf.tidy(() => {
        let output = graph.predict(images) as tf.Tensor
        if (output.rank === 4) {
          output = tf.mean(output, [1, 2]) // pool a spatial feature map
        }
        if (output.rank !== 2) {
          throw new Error(`model output rank ${output.rank}; expected pooled features`)
        }
        model.dim = output.shape[1] as number
        return output as tf.Tensor2D
      })
    },
    dispose() {
      graph.dispose()
    },
  }
  return model
}

export async function resolveModel(
  name: string,
  seed: number,
  modelDir?: string,
): Promise<FeatureModel> {
  if (modelDir !== undefined) {
    return loadLocalModel(modelDir, name)
  }
  if (name === DEFAULT_MODEL) {
    return seededCnn(seed)
  }
  throw new Error(
    `model ${JSON.stringify(name)} needs --model-dir ` +
      `(pretrained checkpoints are not bundled); the offline default is ${DEFAULT_MODEL}`,
  )
}
