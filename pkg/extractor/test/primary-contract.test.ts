/**
 * Contract test against the search engine: the EMB1 files written here
 * must load and index there. Skipped when the Python engine is not
 * importable on this machine.
 */

import * as tf from '@tensorflow/tfjs'
import { execFileSync } from 'node:child_process'
import { promises as fs } from 'node:fs'
import * as os from 'node:os'
import * as path from 'node:path'
import { PNG } from 'pngjs'
import { beforeAll, describe, expect, it } from 'vitest'

import { extract } from '../src/extract.js'
import { seededCnn } from '../src/model.js'

function pythonEngineAvailable(): boolean {
  try {
    execFileSync('python3', ['-c', 'import wsisearch'], { stdio: 'pipe' })
    return true
  } catch {
    return false
  }
}

const LOAD_AND_INDEX = `
import sys
from wsisearch.atlas import build_record
from wsisearch.embeddings import load_embeddings
from wsisearch.sdm import run_sdm

es = load_embeddings(sys.argv[1])
montage = run_sdm(es, seed=0)
record = build_record(es.wsi_id, "p", "label", montage, es)
print(f"{es.wsi_id} {len(es)} {es.dim} {record.nbits}")
`

describe.skipIf(!pythonEngineAvailable())('primary engine contract', () => {
  beforeAll(async () => {
    await tf.setBackend('cpu')
    await tf.ready()
  })

  it('EMB1 output loads and indexes in the engine', async () => {
    const workDir = await fs.mkdtemp(path.join(os.tmpdir(), 'contract-'))
    const patchesDir = path.join(workDir, 'patches')
    await fs.mkdir(patchesDir)
    for (let k = 0; k < 5; k++) {
      const png = new PNG({ width: 48, height: 48 })
      for (let i = 0; i < 48 * 48; i++) {
        png.data[i * 4] = (i * (k + 1)) % 256
        png.data[i * 4 + 1] = (i * (k + 5)) % 256
        png.data[i * 4 + 2] = (i + k * 37) % 256
        png.data[i * 4 + 3] = 255
      }
      await fs.writeFile(path.join(patchesDir, `case-9_${k}.png`), PNG.sync.write(png))
    }
    const model = seededCnn(42)
    try {
      const out = path.join(workDir, 'case-9.emb')
      const result = await extract({ patchesDir, outPath: out, model, batchSize: 8 })
      expect(result.count).toBe(5)
      const stdout = execFileSync('python3', ['-c', LOAD_AND_INDEX, out], {
        encoding: 'utf8',
      }).trim()
      // wsi_id comes from the manifest; barcode width is dim - 1
      expect(stdout).toBe(`case-9 5 ${result.dim} ${result.dim - 1}`)
    } finally {
      model.dispose()
      await fs.rm(workDir, { recursive: true, force: true })
    }
  }, 120_000)
})
