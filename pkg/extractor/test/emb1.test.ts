import { describe, expect, it } from 'vitest'

import { decodeEmb1, encodeEmb1 } from '../src/emb1.js'

function record(patchIndex: number, values: number[]) {
  return { patchIndex, values: new Float32Array(values) }
}

describe('EMB1 encoding', () => {
  it('round-trips records exactly', () => {
    const records = [record(0, [1, 2, 3]), record(5, [4.5, -6, 7.25])]
    const decoded = decodeEmb1(encodeEmb1(records, 3))
    expect(decoded.dim).toBe(3)
    expect(decoded.records.map(r => r.patchIndex)).toEqual([0, 5])
    expect([...decoded.records[1].values]).toEqual([4.5, -6, 7.25])
  })

  it('writes the documented header layout', () => {
    const buffer = encodeEmb1([record(7, [1])], 1)
    expect(buffer.subarray(0, 4)).toEqual(Buffer.from([0x45, 0x4d, 0x42, 0x31]))
    expect(buffer.readUInt32LE(4)).toBe(1) // N
    expect(buffer.readUInt32LE(8)).toBe(1) // D
    expect(buffer.readUInt32LE(12)).toBe(7) // patch_index
    expect(buffer.length).toBe(12 + 4 + 4)
  })

  it('is stable byte for byte', () => {
    const records = [record(1, [0.125, -3])]
    expect(encodeEmb1(records, 2).equals(encodeEmb1(records, 2))).toBe(true)
  })

  it('rejects dimension mismatches', () => {
    expect(() => encodeEmb1([record(0, [1, 2])], 3)).toThrow(/dim/)
  })

  it('rejects duplicate patch indices', () => {
    expect(() => encodeEmb1([record(1, [0]), record(1, [0])], 1)).toThrow(/unique/)
  })

  it('rejects non-finite values', () => {
    expect(() => encodeEmb1([record(0, [NaN])], 1)).toThrow(/finite/)
  })

  it('decode rejects a bad magic', () => {
    expect(() => decodeEmb1(Buffer.from('XMB1\0\0\0\0\0\0\0\0'))).toThrow(/magic/)
  })

  it('decode rejects truncated payloads', () => {
    const buffer = encodeEmb1([record(0, [1, 2, 3])], 3)
    expect(() => decodeEmb1(buffer.subarray(0, buffer.length - 2))).toThrow(/length/)
  })

  it('accepts an empty record list', () => {
    const decoded = decodeEmb1(encodeEmb1([], 8))
    expect(decoded.dim).toBe(8)
    expect(decoded.records).toHaveLength(0)
  })
})
