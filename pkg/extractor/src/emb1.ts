/**
 * EMB1 embedding file format.
 *
 * Layout: magic "EMB1" (45 4D 42 31), u32-LE record count N, u32-LE
 * dimension D, then N records of (u32-LE patch_index, D x f32-LE
 * values). An optional JSON manifest lives beside the file at
 * `<file>.json` and may carry wsi_id and provenance.
 */

import { promises as fs } from 'node:fs'

export const EMB_MAGIC = 'EMB1'

export interface EmbRecord {
  patchIndex: number
  values: Float32Array
}

export function encodeEmb1(records: EmbRecord[], dim: number): Buffer {
  for (const record of records) {
    if (record.values.length !== dim) {
      throw new Error(
        `record ${record.patchIndex}: dim ${record.values.length} != ${dim}`,
      )
    }
    for (const value of record.values) {
      if (!Number.isFinite(value)) {
        throw new Error(`record ${record.patchIndex}: non-finite value`)
      }
    }
  }
  const indices = new Set(records.map(r => r.patchIndex))
  if (indices.size !== records.length) {
    throw new Error('patch indices must be unique')
  }
  const recordSize = 4 + 4 * dim
  const buffer = Buffer.alloc(12 + records.length * recordSize)
  buffer.write(EMB_MAGIC, 0, 'ascii')
  buffer.writeUInt32LE(records.length, 4)
  buffer.writeUInt32LE(dim, 8)
  let offset = 12
  for (const record of records) {
    buffer.writeUInt32LE(record.patchIndex, offset)
    offset += 4
    for (const value of record.values) {
      buffer.writeFloatLE(value, offset)
      offset += 4
    }
  }
  return buffer
}

export function decodeEmb1(buffer: Buffer): { dim: number; records: EmbRecord[] } {
  if (buffer.length < 4 || buffer.toString('ascii', 0, 4) !== EMB_MAGIC) {
    throw new Error('bad embedding magic (byte offset 0)')
  }
  if (buffer.length < 12) {
    throw new Error(`truncated embedding header (byte offset ${buffer.length})`)
  }
  const count = buffer.readUInt32LE(4)
  const dim = buffer.readUInt32LE(8)
  if (dim < 1) {
    throw new Error('embedding dimension must be >= 1 (byte offset 8)')
  }
  const expected = 12 + count * (4 + 4 * dim)
  if (buffer.length !== expected) {
    throw new Error(
      `embedding payload length mismatch: expected ${expected}, got ${buffer.length}`,
    )
  }
  const records: EmbRecord[] = []
  let offset = 12
  for (let i = 0; i < count; i++) {
    const patchIndex = buffer.readUInt32LE(offset)
    offset += 4
    const values = new Float32Array(dim)
    for (let j = 0; j < dim; j++) {
      values[j] = buffer.readFloatLE(offset)
      offset += 4
    }
    records.push({ patchIndex, values })
  }
  return { dim, records }
}

export async function writeEmb1(
  path: string,
  records: EmbRecord[],
  dim: number,
  manifest?: Record<string, unknown>,
): Promise<void> {
  const tmp = `${path}.tmp`
  await fs.writeFile(tmp, encodeEmb1(records, dim))
  await fs.rename(tmp, path)
  if (manifest !== undefined) {
    const manifestTmp = `${path}.json.tmp`
    await fs.writeFile(manifestTmp, stableJson(manifest) + '\n')
    await fs.rename(manifestTmp, `${path}.json`)
  }
}

/** JSON with sorted keys so manifests are byte-stable across runs. */
export function stableJson(value: unknown): string {
  return JSON.stringify(sortKeys(value), null, 2)
}

function sortKeys(value: unknown): unknown {
  if (Array.isArray(value)) {
    return value.map(sortKeys)
  }
  if (value !== null && typeof value === 'object') {
    const entries = Object.entries(value as Record<string, unknown>)
    entries.sort(([a], [b]) => (a < b ? -1 : a > b ? 1 : 0))
    return Object.fromEntries(entries.map(([k, v]) => [k, sortKeys(v)]))
  }
  return value
}
