/* tslint:disable */
/* eslint-disable */

/**
 * Average entropy per step while rewarding (`"reward"`) or penalising
 * (`"penalty"`) the maximum-PPL rollout of every group, on a small task set.
 */
export function entropy_curve(mode: string, steps: number, eta: number, seed: bigint): string;

/**
 * Synthetic queue with two PPL clusters, then the full threshold sweep.
 *
 * Correct rollouts draw PPL from `1 + |0.5 + u|` and errors from
 * `1 + |0.5 + separation + u|` with `u` uniform on `[-spread, spread]`.
 */
export function psd_explorer(n_correct: number, n_error: number, separation: number, spread: number, n_min: number, seed: bigint): string;

/**
 * One group through reallocation. `rewards` and `ppls` are comma or space
 * separated lists; a non-finite `tau` means no threshold is available.
 */
export function reallocate_group(rewards: string, ppls: string, tau: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly entropy_curve: (a: number, b: number, c: number, d: number, e: bigint) => [number, number];
    readonly psd_explorer: (a: number, b: number, c: number, d: number, e: number, f: bigint) => [number, number];
    readonly reallocate_group: (a: number, b: number, c: number, d: number, e: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
