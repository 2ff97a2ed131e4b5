/** Subtle attention cue on each new prompt: short beep plus vibration.
 * Toggleable; off state is remembered in localStorage. */

const STORAGE_KEY = "dlot.cue";

export class AttentionCue {
  enabled: boolean;
  private audio: AudioContext | null = null;

  constructor() {
    this.enabled = localStorage.getItem(STORAGE_KEY) !== "off";
  }

  toggle(): boolean {
    this.enabled = !this.enabled;
    localStorage.setItem(STORAGE_KEY, this.enabled ? "on" : "off");
    return this.enabled;
  }

  play(): void {
    if (!this.enabled) return;
    try {
      navigator.vibrate?.(80);
    } catch {
      // vibration unsupported
    }
    try {
      this.audio = this.audio ?? new AudioContext();
      const osc = this.audio.createOscillator();
      const gain = this.audio.createGain();
      osc.frequency.value = 880;
      gain.gain.value = 0.04;
      osc.connect(gain).connect(this.audio.destination);
      osc.start();
      osc.stop(this.audio.currentTime + 0.12);
    } catch {
      // no audio context (autoplay policy or headless)
    }
  }
}
