import * as tf from '@tensorflow/tfjs'
import { promises as fs } from 'node:fs'
import * as os from 'node:os'
import * as path from 'node:path'
import { PNG } from 'pngjs'
import { afterAll, beforeAll, describe, expect, it } from 'vitest'

import { decodeEmb1 } from '../src/emb1.js'
import { extract, scanPatches } from '../src/extract.js'
import { FeatureModel, seededCnn } from '../src/model.js'

let workDir: string
let model: FeatureModel

function patchPng(variant: number, size = 32): Buffer {
  const png = new PNG({ width: size, height: size })
  for (let y = 0; y < size; y++) {
    for (let x = 0; x < size; x++) {
      const i = (y * size + x) * 4
      png.data[i] = (x * (variant + 1)) % 256
      png.data[i + 1] = (y * (variant + 2)) % 256
      png.data[i + 2] = ((x ^ y) * (variant + 3)) % 256
      png.data[i + 3] = 255
    }
  }
  return PNG.sync.write(png)
}

async function writePatches(dir: string, wsiId: string, indices: number[]) {
  await fs.mkdir(dir, { recursive: true })
  for (const index of indices) {
    await fs.writeFile(path.join(dir, `${wsiId}_${index}.png`), patchPng(index))
  }
}

beforeAll(async () => {
  await tf.setBackend('cpu')
  await tf.ready()
  workDir = await fs.mkdtemp(path.join(os.tmpdir(), 'extract-'))
  model = seededCnn(42)
})

afterAll(async () => {
  model.dispose()
  await fs.rm(workDir, { recursive: true, force: true })
})

describe('scanPatches', () => {
  it('parses ids and orders by patch index', async () => {
    const dir = path.join(workDir, 'scan')
    await writePatches(dir, 'slide_a', [3, 0, 11])
    const patches = await scanPatches(dir)
    expect(patches.map(p => p.patchIndex)).toEqual([0, 3, 11])
    expect(patches.every(p => p.wsiId === 'slide_a')).toBe(true)
  })

  it('keeps underscores inside the wsi_id', async () => {
    const dir = path.join(workDir, 'scan-underscore')
    await writePatches(dir, 'tcga_brca_001', [2])
    const patches = await scanPatches(dir)
    expect(patches[0].wsiId).toBe('tcga_brca_001')
    expect(patches[0].patchIndex).toBe(2)
  })

  it('rejects a directory mixing two WSIs without --wsi-id', async () => {
    const dir = path.join(workDir, 'scan-mixed')
    await writePatches(dir, 'one', [0])
    await writePatches(dir, 'two', [0])
    await expect(scanPatches(dir)).rejects.toThrow(/wsi-id/)
    const only = await scanPatches(dir, 'two')
    expect(only).toHaveLength(1)
  })

  it('rejects an empty directory', async () => {
    const dir = path.join(workDir, 'scan-empty')
    await fs.mkdir(dir, { recursive: true })
    await expect(scanPatches(dir)).rejects.toThrow(/no patch PNGs/)
  })
})

describe('extract', () => {
  it('produces one embedding per patch with the model dimension', async () => {
    const dir = path.join(workDir, 'five')
    await writePatches(dir, 'w1', [0, 1, 2, 3, 4])
    const out = path.join(workDir, 'w1.emb')
    const result = await extract({ patchesDir: dir, outPath: out, model, batchSize: 2 })
    expect(result.count).toBe(5)
    expect(result.dim).toBe(1024)
    const decoded = decodeEmb1(await fs.readFile(out))
    expect(decoded.dim).toBe(1024)
    expect(decoded.records.map(r => r.patchIndex)).toEqual([0, 1, 2, 3, 4])
    for (const record of decoded.records) {
      expect([...record.values].every(Number.isFinite)).toBe(true)
    }
  })

  it('is deterministic byte for byte across runs', async () => {
    const dir = path.join(workDir, 'det')
    await writePatches(dir, 'w2', [0, 1, 2])
    const first = path.join(workDir, 'first.emb')
    const second = path.join(workDir, 'second.emb')
    await extract({ patchesDir: dir, outPath: first, model, batchSize: 8 })
    await extract({ patchesDir: dir, outPath: second, model, batchSize: 8 })
    expect((await fs.readFile(first)).equals(await fs.readFile(second))).toBe(true)
  })

  it('writes a manifest carrying wsi_id and model identity', async () => {
    const dir = path.join(workDir, 'manifest')
    await writePatches(dir, 'w3', [0])
    const out = path.join(workDir, 'w3.emb')
    await extract({ patchesDir: dir, outPath: out, model, batchSize: 1 })
    const manifest = JSON.parse(await fs.readFile(`${out}.json`, 'utf8'))
    expect(manifest.wsi_id).toBe('w3')
    expect(manifest.model).toContain('seeded-cnn-1024')
    expect(manifest.count).toBe(1)
    expect(manifest.preprocessing.mean).toHaveLength(3)
  })

  it('skips undecodable images and records them in the sidecar', async () => {
    const dir = path.join(workDir, 'skip')
    await writePatches(dir, 'w4', [0, 1])
    await fs.writeFile(path.join(dir, 'w4_2.png'), Buffer.from('not a png'))
    const out = path.join(workDir, 'w4.emb')
    const result = await extract({ patchesDir: dir, outPath: out, model, batchSize: 8 })
    expect(result.count).toBe(2)
    expect(result.skipped).toEqual(['w4_2.png'])
    const sidecar = JSON.parse(await fs.readFile(`${out}.skipped.json`, 'utf8'))
    expect(sidecar).toEqual(['w4_2.png'])
  })

  it('fails when nothing decodes', async () => {
    const dir = path.join(workDir, 'allbad')
    await fs.mkdir(dir, { recursive: true })
    await fs.writeFile(path.join(dir, 'w5_0.png'), Buffer.from('junk'))
    const out = path.join(workDir, 'w5.emb')
    await expect(
      extract({ patchesDir: dir, outPath: out, model, batchSize: 1 }),
    ).rejects.toThrow(/failed to decode/)
  })

  it('different seeds give different features', async () => {
    const dir = path.join(workDir, 'seeds')
    await writePatches(dir, 'w6', [0])
    const other = seededCnn(7)
    try {
      const outA = path.join(workDir, 'seedA.emb')
      const outB = path.join(workDir, 'seedB.emb')
      await extract({ patchesDir: dir, outPath: outA, model, batchSize: 1 })
      await extract({ patchesDir: dir, outPath: outB, model: other, batchSize: 1 })
      expect((await fs.readFile(outA)).equals(await fs.readFile(outB))).toBe(false)
    } finally {
      other.dispose()
    }
  })
})
